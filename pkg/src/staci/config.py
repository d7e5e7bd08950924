# ABOUTME: Configuration management using XDG Base Directory specification
# ABOUTME: Loads config.toml, merges it over defaults and validates experiment settings
import logging
import os
import tomllib
from pathlib import Path
from typing import TYPE_CHECKING, Any

from staci.exceptions import ConfigError

if TYPE_CHECKING:
    from staci.harness import ExperimentConfig

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "STACI_OUTPUT_DIR"


class Config:
    """
    Configuration management for staci using XDG Base Directory specification.

    Config root: $XDG_CONFIG_HOME/staci (default: ~/.config/staci)

    The config.toml file has sections:
    - [experiment] - split, calibration window, alpha/lambda/gamma, AR settings
    - [simulation] - discretization of the tail-up simulator
    - [tailup] - grid used when fitting the topology covariance
    - [covariance] - ridge for the sample precision branch
    - [logging] - level and optional log file name
    - [output] - default output directory
    """

    APP_NAME = "staci"

    def __init__(self, config_file: str | Path | None = None):
        xdg_state_home = os.environ.get("XDG_STATE_HOME", os.path.expanduser("~/.local/state"))
        self.state_dir = Path(xdg_state_home) / self.APP_NAME

        if config_file is None:
            xdg_config_home = os.environ.get("XDG_CONFIG_HOME", os.path.expanduser("~/.config"))
            self.config_dir = Path(xdg_config_home) / self.APP_NAME
            self.config_file = self.config_dir / "config.toml"
            logger.debug(f"Using XDG config directory: {self.config_dir}")
        else:
            self.config_file = Path(config_file).expanduser().resolve()
            self.config_dir = self.config_file.parent
            if not self.config_file.exists():
                raise ConfigError(
                    f"Config file not found: {self.config_file}",
                    recovery_hint="Pass an existing TOML file to --config",
                )

        self._load_config()

    def _load_config(self):
        """Load configuration from config.toml, falling back to defaults."""
        if self.config_file.exists():
            try:
                with open(self.config_file, "rb") as f:
                    loaded_settings = tomllib.load(f)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(
                    f"Invalid TOML in config file {self.config_file}: {e}",
                    recovery_hint="Fix the syntax error and try again.",
                ) from e
            except OSError as e:
                raise ConfigError(f"Failed to load config from {self.config_file}: {e}") from e
            self.settings = self._merge_with_defaults(loaded_settings)
        else:
            logger.debug(f"No config.toml found at {self.config_file}, using defaults")
            self.settings = self._default_settings()
        self._validate_settings()

    def _merge_with_defaults(self, loaded: dict) -> dict:
        """Merge loaded settings with defaults, preserving loaded values."""
        defaults = self._default_settings()

        result = defaults.copy()
        for section, values in loaded.items():
            section_is_table = isinstance(result.get(section), dict) and isinstance(values, dict)
            if section_is_table:
                result[section] = {**result[section], **values}
            else:
                result[section] = values

        return result

    def _default_settings(self) -> dict[str, Any]:
        """Default configuration settings."""
        return {
            "experiment": {
                "train_fraction": 0.6,
                "n_cal": 300,
                "alpha": 0.05,
                "lambda": 0.5,
                "gamma": 0.0,
                "mode": "online",
                "refit_every": 1,
                "n_seeds": 10,
                "ar_order": 2,
                "ar_shared": True,
                "ar_intercept": True,
            },
            "simulation": {
                "subintervals_per_segment": 300,
                "headwater_extension_factor": 10.0,
                "kernel_range": 1.0,
            },
            "tailup": {
                "grid_points": 50,
                "grid_span": 100.0,
            },
            "covariance": {"sample_ridge": 1e-6},
            "logging": {"level": "INFO", "file": ""},
            "output": {"directory": ""},
        }

    def _validate_settings(self):
        """Validate settings are within acceptable ranges."""
        exp = self.settings.get("experiment", {})
        checks = [
            (
                0.0 < exp.get("train_fraction", 0.6) < 1.0,
                "experiment.train_fraction must be in (0, 1)",
            ),
            (int(exp.get("n_cal", 300)) >= 1, "experiment.n_cal must be >= 1"),
            (0.0 < exp.get("alpha", 0.05) < 1.0, "experiment.alpha must be in (0, 1)"),
            (0.0 <= exp.get("lambda", 0.5) <= 1.0, "experiment.lambda must be in [0, 1]"),
            (exp.get("gamma", 0.0) >= 0.0, "experiment.gamma must be >= 0"),
            (
                exp.get("mode", "online") in ("online", "offline"),
                "experiment.mode must be online or offline",
            ),
            (int(exp.get("refit_every", 1)) >= 1, "experiment.refit_every must be >= 1"),
            (int(exp.get("n_seeds", 10)) >= 1, "experiment.n_seeds must be >= 1"),
            (int(exp.get("ar_order", 2)) >= 1, "experiment.ar_order must be >= 1"),
        ]
        sim = self.settings.get("simulation", {})
        checks += [
            (
                int(sim.get("subintervals_per_segment", 300)) >= 1,
                "simulation.subintervals_per_segment must be >= 1",
            ),
            (
                sim.get("headwater_extension_factor", 10.0) >= 0,
                "simulation.headwater_extension_factor must be >= 0",
            ),
            (sim.get("kernel_range", 1.0) > 0, "simulation.kernel_range must be > 0"),
        ]
        tailup = self.settings.get("tailup", {})
        checks += [
            (int(tailup.get("grid_points", 50)) >= 3, "tailup.grid_points must be >= 3"),
            (tailup.get("grid_span", 100.0) > 1.0, "tailup.grid_span must be > 1"),
            (
                self.settings.get("covariance", {}).get("sample_ridge", 1e-6) >= 0,
                "covariance.sample_ridge must be >= 0",
            ),
        ]
        problems = [message for ok, message in checks if not ok]
        if problems:
            raise ConfigError(
                f"Invalid settings in {self.config_file}: {'; '.join(problems)}",
                recovery_hint="Fix the values in config.toml or remove them to use defaults",
            )

        log_settings = self.settings.get("logging", {})
        level = str(log_settings.get("level", "INFO")).upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            logger.warning(f"Invalid log level '{level}', defaulting to 'INFO'")
            level = "INFO"
        log_settings["level"] = level

    def experiment_config(self, **overrides: Any) -> "ExperimentConfig":
        """Build an ExperimentConfig from [experiment], applying non-None overrides."""
        from staci.harness import ExperimentConfig, Mode

        exp = self.settings["experiment"]
        values: dict[str, Any] = {
            "train_fraction": float(exp["train_fraction"]),
            "n_cal": int(exp["n_cal"]),
            "alpha": float(exp["alpha"]),
            "lam": float(exp["lambda"]),
            "gamma": float(exp["gamma"]),
            "mode": Mode(exp["mode"]),
            "refit_every": int(exp["refit_every"]),
            "seeds": tuple(range(int(exp["n_seeds"]))),
            "ar_order": int(exp["ar_order"]),
            "ar_shared": bool(exp["ar_shared"]),
            "ar_intercept": bool(exp["ar_intercept"]),
            "sample_ridge": float(self.settings["covariance"]["sample_ridge"]),
            "tailup_grid_points": int(self.settings["tailup"]["grid_points"]),
            "tailup_grid_span": float(self.settings["tailup"]["grid_span"]),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return ExperimentConfig(**values)

    def get_log_dir(self) -> Path:
        return self.state_dir / "logs"

    def get_output_dir(self) -> Path | None:
        """Default output directory: $STACI_OUTPUT_DIR, then [output].directory."""
        directory = os.environ.get(OUTPUT_DIR_ENV) or self.settings["output"].get("directory")
        return Path(directory).expanduser() if directory else None
