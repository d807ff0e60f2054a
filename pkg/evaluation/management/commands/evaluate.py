from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from posebench.exceptions import PoseBenchError
from evaluation.config import RunConfig, add_run_arguments
from evaluation.metric_service import score_run
from evaluation.reports import BEST_WORST_FILE, write_best_worst, write_report


class Command(BaseCommand):
    help = 'Evaluate stored predictions against a ground-truth dataset and write precision tables'

    def add_arguments(self, parser):
        add_run_arguments(parser)

    def handle(self, *args, **options):
        try:
            run = RunConfig.from_sources(options, options.get('config'))
            run.validate()
            self.stderr.write(f"Evaluating {len(run.pred)} method(s) against {run.gt}...")
            samples, results = score_run(run)
        except ValidationError as e:
            raise CommandError(f"validation error: {'; '.join(e.messages)}", returncode=1)
        except PoseBenchError as e:
            raise CommandError(f"computation failed: {e}", returncode=2)

        try:
            written = write_report(
                [result.report for result in results],
                run.out,
                records_by_method={result.method: result.records for result in results},
                run=run,
                extra={'n_ground_truth': len(samples)},
            )
            for result in results:
                if result.best_worst:
                    written.append(write_best_worst(run.out / result.method / BEST_WORST_FILE, result.best_worst))
        except ValidationError as e:
            raise CommandError(f"validation error: {'; '.join(e.messages)}", returncode=1)

        for result in results:
            report = result.report
            self.stdout.write(f"{result.method}: n={report.n} failures={len(report.failures)}")
            for row in report.rows:
                self.stdout.write(f"  {row.spec.name}: {row.overall:.4f}")
        self.stderr.write(f"Wrote {len(written)} file(s) to {run.out}")
