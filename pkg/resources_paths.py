from pathlib import Path

package_dir = Path(__file__).parent

SETTINGS_PATH = package_dir / "settings.yaml"
DATA_PATH = package_dir / "data"
CONFIGS_PATH = DATA_PATH / "configs"
ONEHOT_SETTINGS_PATH = CONFIGS_PATH / "onehot.yaml"
MODELS_PATH = DATA_PATH / "models"
