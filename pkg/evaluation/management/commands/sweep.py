import math

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from posebench.exceptions import InvalidThresholdError, PoseBenchError
from evaluation.aggregation import SweepAxis, ThresholdSpec, sweep
from evaluation.config import RunConfig, add_run_arguments
from evaluation.metric_service import score_run
from evaluation.reports import write_curve, write_json, report_metadata

AXES = tuple(axis.value for axis in SweepAxis)


def parse_grid(text: str) -> list[float]:
    """
    Parse 'start:stop:step' (stop included) or a comma separated list of values.

    Raises:
        ValidationError: malformed grid or non-positive step
    """
    text = (text or '').strip()
    if not text:
        raise ValidationError("grid must not be empty")
    if ':' in text:
        parts = text.split(':')
        if len(parts) != 3:
            raise ValidationError(f"grid '{text}': expected start:stop:step")
        try:
            start, stop, step = (float(part) for part in parts)
        except ValueError:
            raise ValidationError(f"grid '{text}': values must be numbers") from None
        if not step > 0.0 or stop < start:
            raise ValidationError(f"grid '{text}': need step > 0 and stop >= start")
        count = math.floor((stop - start) / step + 1e-9) + 1
        return [round(start + index * step, 12) for index in range(count)]
    try:
        return [float(value) for value in text.split(',') if value.strip()]
    except ValueError:
        raise ValidationError(f"grid '{text}': values must be numbers") from None


def check_grid(axis: str, grid, fscore_delta: float):
    """
    Reject grid values outside the range of `axis` (e.g. rotations above 180 degrees).

    Raises:
        ValidationError: one message per invalid value
    """
    field = SweepAxis.parse(axis).spec_field
    errors = []
    for value in grid:
        try:
            ThresholdSpec(**{field: value, 'fscore_delta': fscore_delta})
        except InvalidThresholdError as e:
            errors.append(f"grid value {value:g}: {e}")
    if errors:
        raise ValidationError(errors)


class Command(BaseCommand):
    help = 'Write precision-versus-threshold curves along one threshold axis'

    def add_arguments(self, parser):
        add_run_arguments(parser)
        parser.add_argument('--axis', required=True, help=f"Threshold axis ({', '.join(AXES)})")
        parser.add_argument('--grid', required=True, help='start:stop:step (inclusive) or comma separated values')

    def handle(self, *args, **options):
        axis = options['axis']
        if axis not in AXES:
            raise CommandError(f"invalid axis '{axis}', expected one of {', '.join(AXES)}", returncode=1)
        try:
            grid = parse_grid(options['grid'])
            run = RunConfig.from_sources(options, options.get('config'))
            run.validate()
            check_grid(axis, grid, run.delta)
            self.stderr.write(f"Sweeping {axis} over {len(grid)} threshold(s)...")
            _, results = score_run(run)
            curves = {
                result.method: sweep(
                    [records[0] for records in result.hypothesis_records.values()], axis, grid, run.delta
                )
                for result in results
            }
        except ValidationError as e:
            raise CommandError(f"validation error: {'; '.join(e.messages)}", returncode=1)
        except PoseBenchError as e:
            raise CommandError(f"computation failed: {e}", returncode=2)

        try:
            path = write_curve(run.out / f"sweep_{axis}.csv", axis, curves)
            write_json(run.out / f"sweep_{axis}.json", report_metadata(
                [result.report for result in results], run, {'axis': axis, 'grid': grid},
            ))
        except ValidationError as e:
            raise CommandError(f"validation error: {'; '.join(e.messages)}", returncode=1)

        for method, curve in curves.items():
            self.stdout.write(f"{method}: " + ' '.join(f"{point.threshold:g}={point.precision:.4f}" for point in curve))
        self.stderr.write(f"Wrote {path}")
