import json

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from posebench import __version__
from posebench.exceptions import PipelineStageError, PoseBenchError
from evaluation.config import parse_symmetry
from evaluation.dataset_io import write_ground_truth, write_mesh
from annotation.annotation_service import AnnotationService, annotation_service
from annotation.pipeline import IcpParams
from annotation.sequence import load_sequence

DIAGNOSTICS_FILE = 'diagnostics.json'


class Command(BaseCommand):
    help = 'Build ground-truth meshes, boxes and poses from a depth sequence with seed boxes'

    def add_arguments(self, parser):
        parser.add_argument('sequence', help='Sequence directory or sequence.json')
        parser.add_argument('--out', required=True, help='Output directory for the ground-truth dataset')
        parser.add_argument('--resolution', type=float, help='Voxel size in meters')
        parser.add_argument('--margin', type=float, help='Carving margin in meters')
        parser.add_argument('--smoothing-iterations', type=int, help='Laplacian smoothing iterations')
        parser.add_argument('--smoothing-lambda', type=float, help='Laplacian smoothing step in [0, 1]')
        parser.add_argument('--replicas', type=int, help='Rotated copies added for symmetric categories')
        parser.add_argument('--icp-iterations', type=int, help='Maximum ICP iterations per frame')
        parser.add_argument('--no-refine', action='store_true', help='Keep the seed box poses as given')
        parser.add_argument('--symmetry', help="Symmetry table override, e.g. 'bottle:0,1,0;can:0,1,0'")

    def _service(self, options) -> AnnotationService:
        overrides = ('resolution', 'margin', 'smoothing_iterations', 'smoothing_lambda', 'replicas', 'icp_iterations')
        if not options['no_refine'] and all(options[key] is None for key in overrides):
            return annotation_service
        defaults = settings.POSEBENCH['ANNOTATION']
        try:
            icp = IcpParams(
                max_iterations=options['icp_iterations'] or defaults['ICP_MAX_ITERATIONS'],
                reject_distance=defaults['ICP_REJECT_DISTANCE'],
                tolerance=defaults['ICP_TOLERANCE'],
            )
        except PoseBenchError as e:
            raise ValidationError(str(e)) from None
        service = AnnotationService(
            resolution=options['resolution'],
            margin=options['margin'],
            smoothing_iterations=options['smoothing_iterations'],
            smoothing_lambda=options['smoothing_lambda'],
            symmetry_replicas=options['replicas'],
            icp=icp,
            refine=not options['no_refine'],
        )
        errors = []
        if not service.resolution > 0.0:
            errors.append(f"resolution must be positive, got {service.resolution}")
        if service.margin < 0.0:
            errors.append(f"margin must be non-negative, got {service.margin}")
        if service.smoothing_iterations < 0:
            errors.append(f"smoothing iterations must be non-negative, got {service.smoothing_iterations}")
        if not 0.0 <= service.smoothing_lambda <= 1.0:
            errors.append(f"smoothing lambda must be in [0, 1], got {service.smoothing_lambda}")
        if service.symmetry_replicas < 0:
            errors.append(f"replicas must be non-negative, got {service.symmetry_replicas}")
        if errors:
            raise ValidationError(errors)
        return service

    def handle(self, *args, **options):
        try:
            service = self._service(options)
            symmetry = parse_symmetry(options['symmetry']) if options['symmetry'] else None
            sequence = load_sequence(options['sequence'], symmetry)
            self.stderr.write(f"Annotating {len(sequence.objects)} object(s) over {len(sequence.frames)} frame(s)...")
            annotations = []
            for item in sequence.objects:
                try:
                    annotations.append(service.annotate_object(sequence.frames, item))
                except PipelineStageError as e:
                    raise PipelineStageError(e.stage, f"object '{item.name}': {e.cause}") from e
        except ValidationError as e:
            raise CommandError(f"validation error: {'; '.join(e.messages)}", returncode=1)
        except PipelineStageError as e:
            raise CommandError(f"annotation failed at stage '{e.stage}': {e.cause}", returncode=2)
        except PoseBenchError as e:
            raise CommandError(f"computation failed: {e}", returncode=2)

        out = options['out']
        try:
            samples = service.ground_truth_samples(sequence, annotations, out)
            manifest = write_ground_truth(samples, out, dataset=sequence.name)
            for annotation in annotations:
                write_mesh(annotation.mesh, manifest.parent / 'objects' / f"{annotation.name}.ply")
            document = {
                'toolkit': 'posebench',
                'version': __version__,
                'sequence': sequence.name,
                'parameters': service.parameters(),
                'objects': [annotation.diagnostics for annotation in annotations],
            }
            diagnostics = manifest.parent / DIAGNOSTICS_FILE
            diagnostics.write_text(json.dumps(document, indent=2, sort_keys=True) + '\n', encoding='utf-8')
        except OSError as e:
            raise CommandError(f"validation error: cannot write to {out}: {e}", returncode=1)
        except ValidationError as e:
            raise CommandError(f"validation error: {'; '.join(e.messages)}", returncode=1)

        for annotation in annotations:
            extents = 'x'.join(f"{value:.4f}" for value in annotation.box.extents)
            self.stdout.write(f"{annotation.name}: {len(annotation.mesh.vertices)} vertices, "
                              f"{len(annotation.mesh)} faces, box {extents} m")
        self.stderr.write(f"Wrote {len(samples)} ground-truth sample(s) to {manifest}")
