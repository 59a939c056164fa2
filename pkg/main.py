"""Command-line entry point: train, infer, eval and synth."""

import argparse
import logging
import os
import sys

from evaluation.metrics import compare_runs, format_comparison, format_table, metrics, metrics_csv
from synthetic.generator import generate_suite, load_recipe, write_suite
from training.model_io import load_model, save_model
from training.pipeline import SplitPlan, evaluate_scenes, infer_scenes, train_model
from utils.config import load_config
from utils.errors import ConfigError, DataError, exit_code_for
from vision.rendering import render_labeling
from vision.scene_io import atomic_write_bytes, encode_png, load_dataset, load_manifest, write_index_map

logger = logging.getLogger("tcrf")


class _Parser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they share the exit-code mapping."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _dataset_root(args, config):
    root = args.dataset or config.dataset_root
    if not root:
        raise ConfigError("No dataset root given (--dataset or dataset.root in the config)")
    return root


def _split_from_manifest(root):
    split = load_manifest(root).get("split")
    return SplitPlan.from_dict(split) if split else None


def _select(scenes, ids):
    by_id = {s.scene_id: s for s in scenes}
    unknown = [i for i in ids if i not in by_id]
    if unknown:
        raise DataError(f"Unknown scene id(s): {unknown}")
    return [by_id[i] for i in ids]


def cmd_train(args):
    config = load_config(args.config, seed=args.seed, mode=args.mode, output_dir=args.out)
    root = _dataset_root(args, config)
    scenes = load_dataset(root, domain=config.domain, site_size=config.features.site_size)
    split = _split_from_manifest(root)
    print(f"🧠 Training {config.mode} model on {len(scenes)} scenes from {root}")

    model, trace, split = train_model(config, scenes, split)
    os.makedirs(config.output_dir, exist_ok=True)
    model_path = save_model(model, os.path.join(config.output_dir, f"model_{config.mode}.tcrf"))
    trace_path = os.path.join(config.output_dir, f"powell_trace_{config.mode}.csv")
    trace.to_csv(trace_path)
    print(f"📈 Powell: {trace.summary()}")
    print(f"✅ Model written to {model_path} (trace: {trace_path})")
    return 0


def _write_outputs(out_dir, scene_id, labeling, domain):
    scene_dir = os.path.join(out_dir, scene_id)
    write_index_map(os.path.join(scene_dir, "base.png"), labeling.base)
    write_index_map(os.path.join(scene_dir, "occlusion.png"), labeling.occlusion)
    for name, image in render_labeling(labeling, domain).items():
        atomic_write_bytes(os.path.join(scene_dir, f"{name}_color.png"), encode_png(image))


def cmd_infer(args):
    config = load_config(args.config, seed=args.seed, mode=args.mode, output_dir=args.out)
    model = load_model(args.model)
    root = _dataset_root(args, config)
    scenes = load_dataset(root, domain=model.domain, scene_ids=args.scenes or None, site_size=model.spec.site_size)
    for s in scenes:
        missing = model.spec.missing_channels(s.scene)
        if missing:
            raise ConfigError(f"Scene {s.scene_id} cannot provide the model's features: {missing}")

    out_dir = os.path.join(config.output_dir, "labels")
    results = infer_scenes(model, scenes, config.inference, config.n_jobs)
    for s, (labeling, diagnostics) in zip(scenes, results):
        _write_outputs(out_dir, s.scene_id, labeling, model.domain)
        line = (f"🗺️ {s.scene_id}: {diagnostics['iterations']} LBP iterations, "
                f"delta {diagnostics['delta']:.2e}, score {diagnostics['score']:.1f}")
        if s.labeling is not None:
            base_ok = (labeling.base == s.labeling.base).mean()
            occ_ok = (labeling.occlusion == s.labeling.occlusion).mean()
            line += f", OA base {base_ok:.1%} / occlusion {occ_ok:.1%}"
        print(line)
    print(f"✅ Label maps written to {out_dir}")
    return 0


def _test_scenes(model, scenes):
    test_ids = (model.metadata.get("split") or {}).get("test")
    if not test_ids:
        return scenes
    return _select(scenes, test_ids)


def cmd_eval(args):
    config = load_config(args.config, seed=args.seed, mode=args.mode, output_dir=args.out)
    models = [load_model(args.model)]
    if args.compare:
        models.insert(0, load_model(args.compare))
    root = _dataset_root(args, config)
    scenes = load_dataset(root, domain=models[-1].domain, site_size=models[-1].spec.site_size)
    ignore = config.ignored_base_indices()

    runs = []
    for model in models:
        test = _select(scenes, args.scenes) if args.scenes else _test_scenes(model, scenes)
        cms, _ = evaluate_scenes(model, test, config.inference, ignore_base=ignore, n_jobs=config.n_jobs)
        runs.append((model.mode, cms))
    names = [name for name, _ in runs]

    report = []
    for layer in ("base", "occlusion", "base_occluded"):
        present = [cms[layer] for _, cms in runs if cms[layer].total > 0]
        if len(present) != len(runs):
            logger.warning("Layer %s has no evaluated sites, skipped", layer)
            continue
        report.append(format_table([metrics(cm) for cm in present], names))
        if len(runs) == 2:
            report.append(format_comparison(compare_runs(present[0], present[1]), names))
    text = "\n\n".join(report)
    print(text)

    os.makedirs(config.output_dir, exist_ok=True)
    final = runs[-1][1]
    rows = [metrics(final[layer]) for layer in ("base", "occlusion", "base_occluded") if final[layer].total > 0]
    atomic_write_bytes(os.path.join(config.output_dir, "metrics.csv"), metrics_csv(rows).encode("utf-8"))
    atomic_write_bytes(os.path.join(config.output_dir, "report.txt"), (text + "\n").encode("utf-8"))
    print(f"✅ Metrics written to {config.output_dir}")
    return 0


def cmd_synth(args):
    recipe = load_recipe(args.recipe)
    seed = recipe.seed if args.seed is None else args.seed
    out = args.out or "synthetic_data"
    scenes, split = generate_suite(recipe, args.n, seed=seed)
    write_suite(out, scenes, split, recipe, seed=seed)
    print(f"✅ {len(scenes)} scenes written to {out} (split {len(split.train)}/{len(split.tune)}/{len(split.test)})")
    return 0


def build_parser():
    parser = _Parser(description="Two-layer CRF labeling of scenes with occluded objects")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment YAML (default: $TCRF_CONFIG_PATH or config/experiment.yaml)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--mode", choices=("tcrf", "crf"), help="two-layer model or independent layers")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dataset", help="dataset root (overrides the config)")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[common], help="fit potentials and tune θ")
    train.set_defaults(func=cmd_train)

    infer = sub.add_parser("infer", parents=[common], help="label scenes with a trained model")
    infer.add_argument("--model", required=True)
    infer.add_argument("--scenes", nargs="*", help="scene ids (default: all)")
    infer.set_defaults(func=cmd_infer)

    evaluate = sub.add_parser("eval", parents=[common], help="metrics on the test scenes")
    evaluate.add_argument("--model", required=True)
    evaluate.add_argument("--compare", help="second model, reported as the first run of the comparison")
    evaluate.add_argument("--scenes", nargs="*", help="scene ids (default: the model's test split)")
    evaluate.set_defaults(func=cmd_eval)

    synth = sub.add_parser("synth", help="write a synthetic dataset")
    synth.add_argument("--recipe", help="scene recipe YAML (default: config/synthetic_recipe.yaml)")
    synth.add_argument("--n", type=int, default=48, help="number of scenes")
    synth.add_argument("--seed", type=int, help="master seed (default: the recipe's)")
    synth.add_argument("--out", help="dataset root to write")
    synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except KeyboardInterrupt:
        print("\n🛑 Interrupted by user.")
        return 3
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        print(f"❌ {e}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
