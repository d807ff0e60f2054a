import csv

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from posebench.exceptions import PoseBenchError
from geometry.core import TriangleMesh
from geometry.primitives import builtin_mesh
from geometry.sampling import convergence_study
from evaluation.dataset_io import load_mesh
from evaluation.reports import format_value, write_convergence

DEFAULT_SAMPLE_COUNTS = '100,1000,10000,100000'
BUILTIN_PREFIX = 'builtin:'


def resolve_mesh(reference: str) -> TriangleMesh:
    """A mesh file path or 'builtin:<name>' for one of the procedural shapes."""
    if reference.startswith(BUILTIN_PREFIX):
        return builtin_mesh(reference[len(BUILTIN_PREFIX):])
    shape = load_mesh(reference)
    if not isinstance(shape, TriangleMesh):
        raise ValidationError(f"{reference}: the convergence study needs a triangle mesh, not a point set")
    return shape


def parse_sample_counts(text: str) -> list[int]:
    try:
        counts = [int(value) for value in text.split(',') if value.strip()]
    except ValueError:
        raise ValidationError(f"sample counts must be integers, got '{text}'") from None
    if not counts or any(count < 1 for count in counts):
        raise ValidationError(f"sample counts must be a non-empty list of positive integers, got '{text}'")
    return counts


class Command(BaseCommand):
    help = 'Chamfer distance and F-score of two meshes against the number of surface samples'

    def add_arguments(self, parser):
        parser.add_argument('--gt-mesh', required=True, help='Ground-truth mesh file or builtin:<name>')
        parser.add_argument('--pred-mesh', help='Predicted mesh file or builtin:<name> (default: the ground truth)')
        parser.add_argument('--n', default=DEFAULT_SAMPLE_COUNTS, help='Comma separated sample counts')
        parser.add_argument('--delta', type=float, help='F-score distance threshold in meters')
        parser.add_argument('--seed', type=int, help='Base random seed')
        parser.add_argument('--out', help='CSV output path (default: standard output)')

    def handle(self, *args, **options):
        delta = settings.POSEBENCH['FSCORE_DELTA'] if options['delta'] is None else options['delta']
        seed = settings.POSEBENCH['SEED'] if options['seed'] is None else options['seed']
        try:
            if not delta > 0.0:
                raise ValidationError(f"delta must be positive, got {delta}")
            if seed < 0:
                raise ValidationError(f"seed must be non-negative, got {seed}")
            counts = parse_sample_counts(options['n'])
            gt_mesh = resolve_mesh(options['gt_mesh'])
            pred_mesh = resolve_mesh(options['pred_mesh']) if options['pred_mesh'] else gt_mesh
            self.stderr.write(f"Running convergence study over {len(counts)} sample count(s)...")
            rows = convergence_study(gt_mesh, pred_mesh, counts, delta, seed)
        except ValidationError as e:
            raise CommandError(f"validation error: {'; '.join(e.messages)}", returncode=1)
        except PoseBenchError as e:
            raise CommandError(f"computation failed: {e}", returncode=2)

        if options['out']:
            try:
                path = write_convergence(options['out'], rows)
            except ValidationError as e:
                raise CommandError(f"validation error: {'; '.join(e.messages)}", returncode=1)
            self.stderr.write(f"Wrote {path}")
            return

        writer = csv.writer(self.stdout, lineterminator='\n')
        writer.writerow(('n_samples', 'chamfer_m', 'fscore'))
        for row in rows:
            writer.writerow([format_value(row.n_samples), format_value(row.chamfer), format_value(row.fscore)])
