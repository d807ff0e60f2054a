"""
Run configuration shared by the evaluate and sweep commands.

Values are resolved per key in this order: command-line flag, environment
variable, `--config` file, settings default. The config file is a KEY=VALUE
text file read with python-decouple's RepositoryEnv:

    GT=data/synthetic6
    PRED=runs/method_a,runs/method_b
    PRESET=real275-suite
    FRAME=world
    SAMPLES=10000
    SEED=0
    OUT=reports/synthetic6
    DELTA=0.01
    IOU_STEPS=120
    SYMMETRY=bottle:0,1,0;bowl:0,1,0;can:0,1,0
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from decouple import Csv, RepositoryEnv
from django.conf import settings
from django.core.exceptions import ValidationError
from typing_extensions import Self

from geometry.shape_metrics import Frame
from .aggregation import PRESETS, ThresholdSpec, get_preset

logger = logging.getLogger(__name__)


def parse_symmetry(text: str) -> dict:
    """Parse 'name:x,y,z;name:x,y,z' into a symmetry table; an empty string means no symmetric category."""
    table = {}
    for item in filter(None, (part.strip() for part in text.split(';'))):
        name, separator, axis = item.partition(':')
        name = name.strip()
        if not separator or not name:
            raise ValidationError(f"SYMMETRY: expected name:x,y,z, got '{item}'")
        try:
            values = tuple(float(value) for value in axis.split(','))
        except ValueError:
            raise ValidationError(f"SYMMETRY: axis of '{name}' is not numeric: '{axis}'") from None
        if len(values) != 3 or not any(values):
            raise ValidationError(f"SYMMETRY: axis of '{name}' must be a non-zero 3-vector, got '{axis}'")
        table[name] = values
    return table


def _paths(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(Path(item) for item in value)
    return tuple(Path(item) for item in Csv()(value))


# key: (option name, environment variable, cast of text values, settings default)
CONFIG_KEYS = {
    'GT': ('gt', 'POSEBENCH_GT', Path, lambda: None),
    'PRED': ('pred', 'POSEBENCH_PRED', _paths, lambda: ()),
    'PRESET': ('preset', 'POSEBENCH_DEFAULT_PRESET', str, lambda: settings.POSEBENCH['DEFAULT_PRESET']),
    'FRAME': ('frame', 'POSEBENCH_FRAME', str, lambda: settings.POSEBENCH['FRAME']),
    'SAMPLES': ('samples', 'POSEBENCH_SAMPLE_COUNT', int, lambda: settings.POSEBENCH['SAMPLE_COUNT']),
    'SEED': ('seed', 'POSEBENCH_SEED', int, lambda: settings.POSEBENCH['SEED']),
    'OUT': ('out', 'POSEBENCH_OUT', Path, lambda: None),
    'DELTA': ('delta', 'POSEBENCH_FSCORE_DELTA', float, lambda: settings.POSEBENCH['FSCORE_DELTA']),
    'IOU_STEPS': ('iou_steps', 'POSEBENCH_SYMMETRIC_IOU_STEPS', int,
                  lambda: settings.POSEBENCH['SYMMETRIC_IOU_STEPS']),
    'SYMMETRY': ('symmetry', 'POSEBENCH_SYMMETRY', parse_symmetry,
                 lambda: dict(settings.POSEBENCH['SYMMETRY_TABLE'])),
}


def read_config_file(path) -> RepositoryEnv:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    repository = RepositoryEnv(str(path))
    unknown = sorted(set(repository.data) - set(CONFIG_KEYS))
    if unknown:
        raise ValidationError(f"config file {path}: unknown key(s) {', '.join(unknown)}")
    return repository


def _resolve(key: str, options: dict, repository, environ):
    option, variable, cast, default = CONFIG_KEYS[key]
    value = options.get(option)
    if value not in (None, [], ()):
        # Flags already carry parsed values, except list options given as text.
        return cast(value) if isinstance(value, str) and cast is not str else value
    for source, raw in ((variable, environ.get(variable)),
                        (f"config file key {key}", repository.data.get(key) if repository is not None else None)):
        if raw is not None:
            try:
                return cast(raw)
            except (TypeError, ValueError) as e:
                raise ValidationError(f"{source}: invalid value '{raw}': {e}") from None
    return default()


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one evaluation run."""
    gt: Path | None = None
    pred: tuple = ()
    preset: str = 'real275-suite'
    specs: tuple = ()
    frame: str = 'world'
    samples: int = 10000
    seed: int = 0
    out: Path | None = None
    delta: float = 0.01
    iou_steps: int = 120
    symmetry: dict = field(default_factory=dict)

    @classmethod
    def from_sources(cls, options: dict | None = None, config_file=None, environ=None) -> Self:
        """
        Resolve every key from flags, environment, config file and settings.

        Args:
            options: parsed command options (missing or None means "not given")
            config_file: optional KEY=VALUE file
            environ: environment mapping, os.environ by default
        """
        options = options or {}
        environ = os.environ if environ is None else environ
        repository = read_config_file(config_file) if config_file else None
        values = {CONFIG_KEYS[key][0]: _resolve(key, options, repository, environ) for key in CONFIG_KEYS}

        specs = tuple(ThresholdSpec.parse(text) for text in options.get('spec') or ())
        return cls(
            gt=Path(values['gt']) if values['gt'] is not None else None,
            pred=_paths(values['pred']),
            preset=values['preset'],
            specs=specs,
            frame=values['frame'],
            samples=int(values['samples']),
            seed=int(values['seed']),
            out=Path(values['out']) if values['out'] is not None else None,
            delta=float(values['delta']),
            iou_steps=int(values['iou_steps']),
            symmetry=dict(values['symmetry']),
        )

    def threshold_specs(self) -> tuple:
        """Custom --spec thresholds when given, otherwise the preset taken at the run's F-score delta."""
        if self.specs:
            return self.specs
        return tuple(
            spec if spec.min_fscore is None or spec.fscore_delta == self.delta
            else ThresholdSpec(spec.name, spec.max_rotation, spec.max_translation, spec.min_iou,
                               spec.min_fscore, self.delta)
            for spec in get_preset(self.preset)
        )

    def validate(self, require_inputs: bool = True):
        """
        Raises:
            ValidationError: every problem found, reported together
        """
        errors = []
        if self.frame not in {frame.value for frame in Frame}:
            errors.append(f"FRAME must be one of {', '.join(frame.value for frame in Frame)}, got '{self.frame}'")
        if self.samples < 1:
            errors.append(f"SAMPLES must be positive, got {self.samples}")
        if self.seed < 0:
            errors.append(f"SEED must be non-negative, got {self.seed}")
        if not self.delta > 0.0:
            errors.append(f"DELTA must be positive, got {self.delta}")
        if self.iou_steps < 1:
            errors.append(f"IOU_STEPS must be positive, got {self.iou_steps}")
        if not self.specs and self.preset not in PRESETS:
            errors.append(f"unknown preset '{self.preset}', expected one of {', '.join(sorted(PRESETS))}")
        errors.extend(
            f"spec '{spec.name}': F-score delta {spec.fscore_delta} differs from DELTA {self.delta}"
            for spec in self.specs if spec.min_fscore is not None and spec.fscore_delta != self.delta
        )
        if require_inputs:
            if self.gt is None:
                errors.append("GT (--gt) is required")
            elif not self.gt.exists():
                errors.append(f"ground-truth path not found: {self.gt}")
            if not self.pred:
                errors.append("PRED (--pred) is required")
            errors.extend(f"predictions path not found: {path}" for path in self.pred if not path.exists())
            if self.out is None:
                errors.append("OUT (--out) is required")
        if errors:
            raise ValidationError(errors)

    def as_dict(self) -> dict:
        """JSON-ready echo of the configuration for report.json."""
        return {
            'gt': str(self.gt) if self.gt is not None else None,
            'pred': [str(path) for path in self.pred],
            'preset': self.preset if not self.specs else None,
            'specs': [spec.as_dict() for spec in self.threshold_specs()],
            'frame': self.frame,
            'samples': self.samples,
            'seed': self.seed,
            'out': str(self.out) if self.out is not None else None,
            'fscore_delta': self.delta,
            'iou_steps': self.iou_steps,
            'symmetry': {name: list(axis) for name, axis in sorted(self.symmetry.items())},
        }


def add_run_arguments(parser):
    """Flags shared by the evaluate and sweep commands."""
    parser.add_argument('--gt', help='Ground-truth dataset root or manifest.json')
    parser.add_argument('--pred', action='append', help='Predictions root or predictions.json (repeatable)')
    parser.add_argument('--config', help='KEY=VALUE configuration file')
    parser.add_argument('--preset', help=f"Threshold preset ({', '.join(sorted(PRESETS))})")
    parser.add_argument('--spec', action='append',
                        help='Custom threshold spec, e.g. "rotation=10,translation=0.02,fscore=0.6" (repeatable)')
    parser.add_argument('--frame', choices=[frame.value for frame in Frame], help='Frame for shape metrics')
    parser.add_argument('--samples', type=int, help='Surface samples per mesh')
    parser.add_argument('--seed', type=int, help='Base random seed')
    parser.add_argument('--delta', type=float, help='F-score distance threshold in meters')
    parser.add_argument('--iou-steps', type=int, dest='iou_steps', help='Azimuth steps of the symmetric IoU search')
    parser.add_argument('--out', help='Output directory')
