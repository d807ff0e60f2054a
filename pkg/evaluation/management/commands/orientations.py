import csv

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from posebench.exceptions import PoseBenchError
from evaluation.config import parse_symmetry
from evaluation.dataset_io import load_ground_truth
from evaluation.orientation import DEFAULT_AZIMUTH_STEP, DEFAULT_ELEVATION_STEP, axis_distribution
from evaluation.reports import AXIS_DISTRIBUTION_COLUMNS, format_value, write_axis_distribution


class Command(BaseCommand):
    help = 'Histogram of ground-truth up-axis directions in the camera frame, by elevation and azimuth'

    def add_arguments(self, parser):
        parser.add_argument('--gt', required=True, help='Ground-truth dataset root or manifest.json')
        parser.add_argument('--elevation-step', type=float, default=DEFAULT_ELEVATION_STEP,
                            help='Elevation bin width in degrees (divides 180)')
        parser.add_argument('--azimuth-step', type=float, default=DEFAULT_AZIMUTH_STEP,
                            help='Azimuth bin width in degrees (divides 360)')
        parser.add_argument('--symmetry', help="Symmetry table override, e.g. 'bottle:0,1,0;can:0,1,0'")
        parser.add_argument('--out', help='CSV output path (default: standard output)')

    def handle(self, *args, **options):
        try:
            symmetry = parse_symmetry(options['symmetry']) if options['symmetry'] else None
            samples = load_ground_truth(options['gt'], symmetry)
            self.stderr.write(f"Binning the up axes of {len(samples)} sample(s)...")
            distribution = axis_distribution(samples, options['elevation_step'], options['azimuth_step'])
        except ValidationError as e:
            raise CommandError(f"validation error: {'; '.join(e.messages)}", returncode=1)
        except PoseBenchError as e:
            raise CommandError(f"computation failed: {e}", returncode=2)

        if options['out']:
            try:
                path = write_axis_distribution(options['out'], distribution)
            except ValidationError as e:
                raise CommandError(f"validation error: {'; '.join(e.messages)}", returncode=1)
            self.stderr.write(f"Wrote {path}")
            return

        writer = csv.writer(self.stdout, lineterminator='\n')
        writer.writerow(AXIS_DISTRIBUTION_COLUMNS)
        for row in distribution.rows():
            writer.writerow([format_value(value) for value in row])
