"""
Distillation / reverse distillation pipeline command.

Usage:
    python manage.py diredi run toy-exp1
    python manage.py diredi run plan.json --out runs/exp1 --no-resume
    python manage.py diredi run toy-exp1 --inject-noise-delta
    python manage.py diredi generate-toy --out data/toy
    python manage.py diredi evaluate --model runs/exp1/models/tutor.ckpt --data runs/exp1/data/eval --out tutor.json
    python manage.py diredi report --run runs/exp1

Every stage command reads explicit artifact paths plus an optional JSON
config and writes only the outputs it names.
"""
import argparse
import dataclasses
from pathlib import Path

from django.core.management.base import BaseCommand

from apps.core.exceptions import ConfigurationError, VerificationGateError
from apps.core.utils import configure_torch, read_json
from apps.datasets.models import SplitMode
from apps.datasets.services import DatasetService
from apps.detectors.models import Tier, tier_config
from apps.detectors.services import DetectorService
from apps.distillation.models import CUSTOMER_RD, EMULATION_RD
from apps.distillation.services import DistillationService, save_record
from apps.evaluation.services import EvaluationService, write_report
from apps.packets.services import PacketService, write_verification
from apps.pipeline.models import StageStatus
from apps.pipeline.services import PipelineService


def _config(path):
    """JSON config file contents, or an empty dict"""
    return read_json(path, stage='config') if path else {}


class Command(BaseCommand):
    help = 'Run the distillation / reverse-distillation pipeline or one of its stages'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='action', required=True)

        run = subparsers.add_parser('run', help='Run every stage of a plan file or built-in preset')
        run.add_argument('plan', help='Plan JSON file or preset name (toy-exp1, toy-exp2, voc-exp1, voc-exp2)')
        run.add_argument('--out', help='Run directory (default: DIREDI_OUTPUT_ROOT/<plan id>)')
        run.add_argument('--seed', type=int, help='Override the plan seed')
        run.add_argument('--resume', action=argparse.BooleanOptionalAction, default=True,
                         help='Skip stages whose config and inputs are unchanged (default)')
        run.add_argument('--inject-noise-delta', action='store_true',
                         help='Replace the packet delta with norm-matched noise')
        run.add_argument('--stages', nargs='+', help='Only run these stages')

        toy = subparsers.add_parser('generate-toy', help='Render the synthetic shapes dataset')
        toy.add_argument('--out', required=True, help='Output directory (train/ and eval/ below it)')
        toy.add_argument('--config', help='ToySpec JSON')
        toy.add_argument('--seed', type=int)
        toy.add_argument('--split', choices=['train', 'eval', 'both'], default='both')

        large = subparsers.add_parser('train-large', help='Train a detector from scratch')
        self._data_arguments(large)
        self._train_arguments(large, 'toy_train')
        large.add_argument('--tier', choices=Tier.values, default=Tier.LARGE)
        large.add_argument('--classes', nargs='+', help='Class order (default: dataset categories)')
        large.add_argument('--input-size', type=int, default=96)

        distill = subparsers.add_parser('distill', help='Forward FGD distillation into a fresh student')
        distill.add_argument('--teacher', required=True)
        distill.add_argument('--tier', choices=Tier.values, required=True, help='Student tier')
        self._data_arguments(distill)
        self._train_arguments(distill, 'toy_kd')

        reverse = subparsers.add_parser('reverse-distill', help='Reverse distillation of a customer tutor')
        reverse.add_argument('--edge', required=True, help='Edge model checkpoint (frozen teacher)')
        reverse.add_argument('--tutor', required=True, help='Original tutor checkpoint')
        reverse.add_argument('--classes', nargs='+', required=True, help='Customer tutor class order')
        reverse.add_argument('--rd-mode', choices=['emulation', 'customer'], required=True,
                             help='Tutor 1 (presumed data only) or tutor 2 (customer data)')
        reverse.add_argument('--init-seed', type=int, default=200, help='Seed for new head rows')
        self._data_arguments(reverse)
        self._train_arguments(reverse, 'toy_rd')

        extract = subparsers.add_parser('extract-delta', help='Build a knowledge packet from two tutors')
        extract.add_argument('--tutor-1', required=True)
        extract.add_argument('--tutor-2', required=True)
        extract.add_argument('--original', required=True, help='Original tutor; its classes are the known classes')
        extract.add_argument('--presumed-data', required=True, help='Presumed dataset directory (fingerprinted)')
        extract.add_argument('--init-seed', type=int, default=200)
        extract.add_argument('--config', help='SubstitutionConfig JSON')
        extract.add_argument('--inject-noise-delta', action='store_true')
        extract.add_argument('--seed', type=int, default=0, help='Noise seed')
        extract.add_argument('--out', required=True)

        apply = subparsers.add_parser('apply-delta', help='Apply a knowledge packet to the original tutor')
        apply.add_argument('--tutor', required=True)
        apply.add_argument('--packet', required=True)
        apply.add_argument('--slot-names', nargs='+', help="Names for the packet's new class slots")
        apply.add_argument('--config', help='SubstitutionConfig JSON')
        apply.add_argument('--out', required=True)

        verify = subparsers.add_parser('verify', help='Manufacturer verification of an updated tutor')
        verify.add_argument('--original', required=True)
        verify.add_argument('--updated', required=True)
        self._data_arguments(verify, output=False)
        verify.add_argument('--config', help='VerificationThresholds JSON')
        verify.add_argument('--out', required=True, help='Verification report JSON')

        redistill = subparsers.add_parser('redistill', help='Distill C: updated tutor into the edge model')
        redistill.add_argument('--tutor', required=True, help='Updated tutor checkpoint')
        redistill.add_argument('--edge', required=True, help='Original edge checkpoint')
        redistill.add_argument('--init-seed', type=int, default=200)
        self._data_arguments(redistill)
        self._train_arguments(redistill, 'toy_finetune')

        direct = subparsers.add_parser('train-direct', help='Fine-tune a model on labelled data only')
        direct.add_argument('--model', required=True)
        direct.add_argument('--classes', nargs='+', help='Re-shape the head to this class order first')
        direct.add_argument('--init-seed', type=int, default=200)
        self._data_arguments(direct)
        self._train_arguments(direct, 'toy_finetune')

        evaluate = subparsers.add_parser('evaluate', help='Per-class AP and P/R/F1 of one checkpoint')
        evaluate.add_argument('--model', required=True)
        self._data_arguments(evaluate, output=False)
        evaluate.add_argument('--config', help='EvalConfig JSON')
        evaluate.add_argument('--label', help='Model label stored in the report')
        evaluate.add_argument('--out', required=True, help='EvalReport JSON')

        report = subparsers.add_parser('report', help='Comparison table and AP charts of a finished run')
        report.add_argument('--run', required=True, help='Run directory')

    def _data_arguments(self, parser, output=True):
        parser.add_argument('--data', required=True, help='Dataset directory (annotations.json + images/)')
        parser.add_argument('--plan', help='Plan file or preset used with --mode to select categories')
        parser.add_argument('--mode', choices=SplitMode.values, help="Split of --data by the plan's categories")
        if output:
            parser.add_argument('--out', required=True, help='Output checkpoint')

    def _train_arguments(self, parser, preset):
        parser.add_argument('--config', help='JSON with train, fgd and rd sections')
        parser.add_argument('--preset', default=preset, help='Named TrainConfig preset')
        parser.add_argument('--seed', type=int, default=0)

    def handle(self, *args, **options):
        configure_torch()
        action = options['action'].replace('-', '_')
        getattr(self, f'handle_{action}')(options)

    # ==================== HELPERS ====================

    def _plan(self, source):
        if Path(source).suffix == '.json' or Path(source).exists():
            return PipelineService.plan_from_file(source)
        return PipelineService.preset(source)

    def _dataset(self, options):
        dataset = DatasetService.load(options['data'], stage='prepare_data')
        if options.get('mode'):
            if not options.get('plan'):
                raise ConfigurationError('--mode needs --plan to know the categories')
            dataset = DatasetService.split(dataset, self._plan(options['plan']).categories, options['mode'])
        return dataset

    def _stage(self, options):
        data = _config(options.get('config'))
        stage = PipelineService.stage_config({k: v for k, v in data.items() if k in ('fgd', 'rd')})
        train = DistillationService.train_config(data.get('train'), options.get('preset'))
        return dataclasses.replace(stage, train=train.with_seed(options['seed']))

    def _save(self, model, record, options, stage):
        path = DetectorService.save(model, options['out'], provenance={'stage': stage}, seed=options['seed'])
        if record is not None:
            save_record(record, Path(path).with_suffix('.record.json'))
        self.stdout.write(self.style.SUCCESS(f'{stage}: wrote {path}'))

    # ==================== ACTIONS ====================

    def handle_run(self, options):
        plan = self._plan(options['plan'])
        overrides = {}
        if options.get('seed') is not None:
            overrides['seed'] = options['seed']
        if options.get('inject_noise_delta'):
            overrides['inject_noise_delta'] = True
        if overrides:
            plan = dataclasses.replace(plan, **overrides)
        manifest = PipelineService.run(plan, options.get('out'), options['resume'], options.get('stages'))
        for name, record in manifest.stages.items():
            style = self.style.SUCCESS if record.status in (StageStatus.COMPLETED, StageStatus.SKIPPED) \
                else self.style.WARNING
            self.stdout.write(style(f'{name:<16} {record.status:<10} {record.wall_clock:8.1f}s'))
        self.stdout.write(self.style.SUCCESS(f'Run complete: {manifest.path}'))

    def handle_generate_toy(self, options):
        data = _config(options.get('config'))
        if options.get('seed') is not None:
            data['seed'] = options['seed']
        spec = DatasetService.toy_spec(data)
        splits = ['train', 'eval'] if options['split'] == 'both' else [options['split']]
        for split in splits:
            directory = DatasetService.save(DatasetService.generate_toy(spec, split), Path(options['out']) / split)
            self.stdout.write(self.style.SUCCESS(f'Toy {split} split written to {directory}'))

    def handle_train_large(self, options):
        dataset = self._dataset(options)
        stage = self._stage(options)
        classes = options.get('classes') or dataset.category_names
        config = tier_config(options['tier'], classes, input_size=options['input_size'])
        model = DetectorService.build_detector(config, options['seed'])
        model, record = DistillationService.train_large(model, dataset, stage.train)
        self._save(model, record, options, 'train_large')

    def handle_distill(self, options):
        dataset = self._dataset(options)
        stage = self._stage(options)
        teacher = DetectorService.load(options['teacher'], stage='train_large')
        config = tier_config(options['tier'], teacher.class_names, input_size=teacher.config.input_size)
        student = DetectorService.build_detector(config, options['seed'])
        student, record = DistillationService.distill(teacher, student, dataset, stage.fgd, stage.train)
        self._save(student, record, options, 'distill')

    def handle_reverse_distill(self, options):
        dataset = self._dataset(options)
        stage = self._stage(options)
        edge = DetectorService.load(options['edge'], stage='distill_b')
        tutor = DetectorService.load(options['tutor'], stage='distill_a')
        tutor_1, tutor_2 = DistillationService.prepare_customer_tutors(tutor, options['classes'],
                                                                       options['init_seed'])
        emulation = options['rd_mode'] == 'emulation'
        rd = stage.rd or (EMULATION_RD if emulation else CUSTOMER_RD)
        name = 'rd_emulation' if emulation else 'rd_customer'
        student = tutor_1 if emulation else tutor_2
        student, record = DistillationService.reverse_distill(edge, student, dataset, stage.fgd, rd, stage.train,
                                                              name=name)
        self._save(student, record, options, name)

    def handle_extract_delta(self, options):
        substitution = PacketService.substitution_config(_config(options.get('config')))
        presumed = DatasetService.load(options['presumed_data'], stage='prepare_data')
        packet = PacketService.build(
            DetectorService.load(options['tutor_1'], stage='rd_emulation'),
            DetectorService.load(options['tutor_2'], stage='rd_customer'),
            known_class_names=DetectorService.load(options['original'], stage='distill_a').class_names,
            substitution=substitution,
            new_row_init_seed=options['init_seed'],
            presumed_fingerprint=DatasetService.fingerprint(presumed),
            inject_noise_seed=options['seed'] if options['inject_noise_delta'] else None,
        )
        path = PacketService.save(packet, options['out'])
        self.stdout.write(self.style.SUCCESS(f'Knowledge packet written to {path}'))

    def handle_apply_delta(self, options):
        substitution = PacketService.substitution_config(_config(options.get('config')))
        tutor = DetectorService.load(options['tutor'], stage='distill_a')
        packet = PacketService.load(options['packet'], stage='extract_delta')
        updated = PacketService.apply_packet(tutor, packet, substitution, slot_names=options.get('slot_names'))
        path = DetectorService.save(updated, options['out'], provenance={'stage': 'apply_delta'})
        self.stdout.write(self.style.SUCCESS(f'Updated tutor written to {path}'))

    def handle_verify(self, options):
        thresholds = PacketService.thresholds(_config(options.get('config')))
        report = PacketService.verify(
            DetectorService.load(options['original'], stage='distill_a'),
            DetectorService.load(options['updated'], stage='apply_delta'),
            self._dataset(options),
            thresholds,
        )
        path = write_verification(report, options['out'])
        if not report.passed:
            failing = [c for c in report.regressed if c not in report.waived_regressions]
            raise VerificationGateError(f'Verification failed for {failing}; report at {path}')
        self.stdout.write(self.style.SUCCESS(f'Verification passed; report at {path}'))

    def handle_redistill(self, options):
        dataset = self._dataset(options)
        stage = self._stage(options)
        tutor = DetectorService.load(options['tutor'], stage='apply_delta')
        edge = DetectorService.load(options['edge'], stage='distill_b')
        model, record = DistillationService.redistill_finetune(tutor, edge, dataset, stage.train, stage.fgd,
                                                               options['init_seed'])
        self._save(model, record, options, 'distill_c')

    def handle_train_direct(self, options):
        dataset = self._dataset(options)
        stage = self._stage(options)
        model = DetectorService.load(options['model'], stage='distill_b')
        if options.get('classes'):
            model = DetectorService.reshape_head(model, options['classes'], options['init_seed'])
        model, record = DistillationService.train_direct(model, dataset, stage.train)
        self._save(model, record, options, 'train_direct')

    def handle_evaluate(self, options):
        config = EvaluationService.config(_config(options.get('config')))
        model = DetectorService.load(options['model'])
        report = EvaluationService.evaluate(model, self._dataset(options), config)
        report.model = options.get('label') or Path(options['model']).stem
        path = write_report(report, options['out'])
        self.stdout.write(self.style.SUCCESS(f'mAP {100 * report.mAP:.1f}%; report at {path}'))

    def handle_report(self, options):
        written = PipelineService.report(options['run'])
        self.stdout.write(self.style.SUCCESS(f"Comparison table written to {written['table']}"))
