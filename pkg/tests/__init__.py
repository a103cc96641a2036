from pathlib import Path


HERE = Path(__file__).parent

DEMO_SPEC_PATH = HERE / "data_git" / "demo.json"
INFEASIBLE_SPEC_PATH = HERE / "data_git" / "infeasible.json"
NO_SIGN_CHANGE_SPEC_PATH = HERE / "data_git" / "no_sign_change.json"
POLYNOMIAL_SPEC_PATH = HERE / "data_git" / "polynomial_duffing.json"
UNKNOWN_KEY_SPEC_PATH = HERE / "data_git" / "unknown_key.json"
MALFORMED_SPEC_PATH = HERE / "data_git" / "malformed.json"
