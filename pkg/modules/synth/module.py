"""
Synth Module - generate a synthetic micro-expression dataset

Writes PNG frames, ``manifest.csv`` and ``dataset.json`` (generator
parameters and seed) under --out. The same spec and seed always produce
identical files.
"""

import argparse

from core.base_module import BaseModule
from shared.ingest import SYNTHETIC_DATASET_ID, SynthSpec, generate_synthetic, write_synthetic
from shared.records import save_json

DATASET_INFO_FILENAME = 'dataset.json'


class SynthModule(BaseModule):
    """Generate a labelled synthetic dataset with known motion"""

    def get_name(self) -> str:
        return "synth"

    def get_help(self) -> str:
        return "generate a synthetic dataset (frames + manifest)"

    def get_order(self) -> int:
        return 10

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        defaults = SynthSpec()
        parser.add_argument('--subjects', type=int, default=defaults.n_subjects)
        parser.add_argument('--clips-per-subject', type=int, default=defaults.clips_per_subject)
        parser.add_argument('--frames-per-clip', type=int, default=defaults.frames_per_clip)
        parser.add_argument('--image-size', type=int, default=defaults.image_size)
        parser.add_argument('--classes', type=int, default=defaults.n_classes)
        parser.add_argument('--amplitude', type=float, default=defaults.motion_amplitude_px,
                            help="peak displacement in pixels")
        parser.add_argument('--noise', type=float, default=defaults.noise_sigma,
                            help="per-pixel Gaussian noise sigma (intensities in [0, 1])")
        parser.add_argument('--dataset-id', default=SYNTHETIC_DATASET_ID,
                            help="dataset id written to the manifest (default: synthetic)")

    def run(self, args: argparse.Namespace) -> int:
        ctx = self.app_context
        spec = SynthSpec(
            n_subjects=args.subjects,
            clips_per_subject=args.clips_per_subject,
            frames_per_clip=args.frames_per_clip,
            image_size=args.image_size,
            n_classes=args.classes,
            motion_amplitude_px=args.amplitude,
            noise_sigma=args.noise,
        )
        spec.validate(ctx.config.k)
        dataset = generate_synthetic(spec, ctx.config.seed, args.dataset_id)
        manifest = write_synthetic(dataset, ctx.ensure_out_dir())
        save_json(ctx.out_dir / DATASET_INFO_FILENAME, {
            'dataset_id': args.dataset_id,
            'seed': ctx.config.seed,
            'spec': vars(spec),
            'samples': len(dataset),
            'classes': list(dataset.label_space.names),
        })
        self.log_message(f"synth: {len(dataset)} samples -> {manifest}")
        return 0
