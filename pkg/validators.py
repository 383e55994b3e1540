import math
import typing

from marshmallow import ValidationError, validate


def _finite(value) -> bool:
    if not math.isfinite(value):
        raise ValidationError("Must be a finite number.")
    return True


def _integer(value) -> bool:
    if isinstance(value, bool) or int(value) != value:
        raise ValidationError("Must be an integer.")
    return True


probability = validate.Range(0.0, 1.0, error="Must be a probability in [0, 1].")

open_fraction = validate.Range(
    0.0, 1.0, min_inclusive=False, max_inclusive=False, error="Must lie strictly between 0 and 1."
)

positive = validate.And(_finite, validate.Range(min=0.0, min_inclusive=False))

non_negative = validate.And(_finite, validate.Range(min=0.0))

greater_than_one = validate.Range(min=1.0, min_inclusive=False)


def integer_at_least(minimum: int) -> validate.Validator:
    return validate.And(_integer, validate.Range(min=minimum))


grid_count = validate.And(_integer, validate.Range(min=2, error="A grid needs at least 2 points."))


def one_of(choices: typing.Iterable[str]) -> validate.Validator:
    return validate.OneOf(list(choices))


def all_in(choices: typing.Iterable[str]) -> validate.Validator:
    return validate.ContainsOnly(list(choices))


def check(value, validator: typing.Callable, name: str, error: type[Exception] = ValueError):
    """Run a marshmallow validator, re-raising its messages as `error` naming the setting."""
    try:
        validator(value)
    except (ValidationError, TypeError, ValueError) as e:
        messages = e.messages if isinstance(e, ValidationError) else [str(e)]
        raise error(f"{name}={value!r}: {' '.join(str(m) for m in messages)}") from None
    return value
