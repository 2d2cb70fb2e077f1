from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from django import forms
from django.core.exceptions import ValidationError

from .exceptions import CoarseIdError
from .services.experiments import CONFIG_SCHEMA_VERSION, ERROR_SOURCES, LAPLACIAN_EXAMPLE, ExperimentConfig, MethodSpec
from .services.lti import CostWeights, LinearSystem, NoiseSpec, laplacian_example


def _matrix(value, label: str) -> np.ndarray:
    try:
        matrix = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"{label} must be a list of numeric rows.") from None
    if matrix.ndim != 2 or not matrix.size or not np.all(np.isfinite(matrix)):
        raise ValidationError(f"{label} must be a non-empty matrix of finite numbers.")
    return matrix


def _positive_integers(value, label: str) -> tuple[int, ...]:
    if not isinstance(value, list) or not value:
        raise ValidationError(f"{label} must be a non-empty list.")
    if not all(isinstance(item, int) and not isinstance(item, bool) and item >= 1 for item in value):
        raise ValidationError(f"{label} must contain positive integers only.")
    return tuple(value)


class ExperimentConfigForm(forms.Form):
    """Validates a version-1 experiment JSON document and builds an ``ExperimentConfig``."""

    schema_version = forms.IntegerField()
    system = forms.JSONField()
    cost = forms.JSONField(required=False)
    noise = forms.JSONField(required=False)
    rollout_counts = forms.JSONField()
    horizon = forms.IntegerField(required=False, min_value=1)
    horizons = forms.JSONField(required=False)
    bootstrap_trials = forms.IntegerField(required=False, min_value=1)
    delta = forms.FloatField(required=False)
    methods = forms.JSONField()
    error_sources = forms.JSONField(required=False)
    trials = forms.IntegerField(required=False, min_value=1)
    seed = forms.IntegerField(required=False, min_value=0)
    output_dir = forms.CharField(required=False)

    def __init__(self, data: dict | None = None, **kwargs) -> None:
        # JSON fields parse their bound value as JSON text.
        document = data or {}
        self.unknown_keys = sorted(set(document) - set(self.base_fields))
        encoded = {
            key: json.dumps(value) if isinstance(self.base_fields.get(key), forms.JSONField) else value
            for key, value in document.items()
        }
        super().__init__(data=encoded if data is not None else None, **kwargs)

    @classmethod
    def from_file(cls, path: Path | str) -> "ExperimentConfigForm":
        path = Path(path)
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise ValidationError(f"{path} must hold a JSON object.")
        return cls(data=payload)

    def clean_schema_version(self):
        version = self.cleaned_data["schema_version"]
        if version != CONFIG_SCHEMA_VERSION:
            raise ValidationError(f"Unsupported schema version {version}; expected {CONFIG_SCHEMA_VERSION}.")
        return version

    def clean_system(self):
        value = self.cleaned_data["system"]
        if value == LAPLACIAN_EXAMPLE:
            return value
        if not isinstance(value, dict) or not {"A", "B"} <= set(value):
            raise ValidationError(f'System must be "{LAPLACIAN_EXAMPLE}" or an object with "A" and "B".')
        try:
            return LinearSystem(_matrix(value["A"], "A"), _matrix(value["B"], "B"))
        except CoarseIdError as exc:
            raise ValidationError(str(exc)) from exc

    def clean_noise(self):
        value = self.cleaned_data.get("noise")
        if value is None:
            return None
        if not isinstance(value, dict):
            raise ValidationError("Noise must be an object with sigma_u and sigma_w.")
        try:
            return NoiseSpec(float(value.get("sigma_u", 1.0)), float(value.get("sigma_w", 1.0)))
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(exc)) from exc

    def clean_rollout_counts(self):
        return _positive_integers(self.cleaned_data["rollout_counts"], "Rollout counts")

    def clean_horizons(self):
        value = self.cleaned_data.get("horizons")
        return None if value is None else _positive_integers(value, "Horizons")

    def clean_delta(self):
        delta = self.cleaned_data.get("delta")
        if delta is not None and not 0 < delta < 1:
            raise ValidationError("Delta must lie strictly between 0 and 1.")
        return delta

    def clean_methods(self):
        value = self.cleaned_data["methods"]
        if not isinstance(value, list) or not value:
            raise ValidationError("Methods must be a non-empty list.")
        try:
            return tuple(MethodSpec.parse(str(item)) for item in value)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc

    def clean_error_sources(self):
        value = self.cleaned_data.get("error_sources")
        if value is None:
            return ("bootstrap",)
        if not isinstance(value, list) or not value:
            raise ValidationError("Error sources must be a non-empty list.")
        unknown = [item for item in value if item not in ERROR_SOURCES]
        if unknown:
            raise ValidationError(f"Unknown error sources {unknown}; choose from {sorted(ERROR_SOURCES)}.")
        return tuple(value)

    def clean(self):
        cleaned_data = super().clean()
        if self.unknown_keys:
            raise ValidationError(f"Unknown configuration keys: {', '.join(self.unknown_keys)}.")
        if cleaned_data.get("horizon") is not None and cleaned_data.get("horizons") is not None:
            self.add_error("horizons", "Give either horizon or horizons, not both.")

        system = cleaned_data.get("system")
        cost = cleaned_data.get("cost")
        if system is None or "cost" in self.errors:
            return cleaned_data
        if isinstance(system, str):
            system, default_cost, _ = laplacian_example()
        else:
            default_cost = CostWeights.identity(system.n, system.p)
        if cost is None:
            cleaned_data["cost"] = default_cost
        else:
            if not isinstance(cost, dict) or not {"Q", "R"} <= set(cost):
                self.add_error("cost", 'Cost must be an object with "Q" and "R".')
                return cleaned_data
            try:
                weights = CostWeights(_matrix(cost["Q"], "Q"), _matrix(cost["R"], "R"))
                weights.check_compatible(system)
            except ValidationError as exc:
                self.add_error("cost", exc)
                return cleaned_data
            except CoarseIdError as exc:
                self.add_error("cost", str(exc))
                return cleaned_data
            cleaned_data["cost"] = weights
        return cleaned_data

    def to_config(self, *, seed: int | None = None) -> ExperimentConfig:
        if not self.is_valid():
            raise ValidationError(self.errors.as_text())
        data = self.cleaned_data
        system = data["system"]
        label = "explicit"
        if isinstance(system, str):
            system, _, default_noise = laplacian_example()
            label = LAPLACIAN_EXAMPLE
        else:
            default_noise = NoiseSpec()
        horizons = data.get("horizons") or (data.get("horizon") or 6,)
        output_dir = data.get("output_dir") or None
        return ExperimentConfig(
            system=system,
            cost=data["cost"],
            noise=data.get("noise") or default_noise,
            rollout_counts=data["rollout_counts"],
            horizons=tuple(horizons),
            bootstrap_trials=data.get("bootstrap_trials") or 500,
            delta=data.get("delta") or 0.05,
            methods=data["methods"],
            error_sources=data["error_sources"],
            trials=data.get("trials") or 1,
            seed=seed if seed is not None else (data.get("seed") or 0),
            output_dir=Path(output_dir) if output_dir else None,
            system_label=label,
        )
