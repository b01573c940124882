import argparse
import json
import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

# Ensure Python finds the 'src' module
sys.path.append(str(Path(__file__).parent))

from src.core.config_loader import Config  # noqa: E402
from src.core.errors import BenchError  # noqa: E402

EXIT_BENCH_ERROR = 2
EXIT_INTERNAL = 1

# ==========================================
#             HELPER FUNCTIONS
# ==========================================


def setup_logging(debug_mode: bool, log_file: Path, level_name: str = "INFO"):
    """File + stdout logging; --debug wins over the configured level."""
    level = logging.DEBUG if debug_mode else getattr(logging, level_name.upper(), logging.INFO)
    format_str = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    log_file.parent.mkdir(parents=True, exist_ok=True)

    logging.basicConfig(
        level=level,
        format=format_str,
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stdout)
        ],
        force=True,
    )

    # Silence noisy libraries
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("numba").setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel(logging.WARNING)


def emit_error(code: str, message: str, details=None):
    """Machine-readable error on stderr."""
    print(json.dumps({"error": code, "message": message, "details": details or {}}, sort_keys=True),
          file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Distortion-robust distillation bench")
    parser.add_argument("--config", default="config.txt", help="INI (or JSON) run configuration")
    parser.add_argument("--seed", type=int, default=None, help="Master seed (overrides [SYSTEM] MASTER_SEED)")
    parser.add_argument("--out", default=None, help="Run directory (overrides [SYSTEM] OUTPUT_DIR / $DISTORTBENCH_OUT)")
    parser.add_argument("--jobs", type=int, default=None, help="Worker processes for reproduce-matrix")
    parser.add_argument("--debug", action="store_true", help="Enable verbose logging")
    parser.add_argument("--experiments", default=None, help="Variant grid YAML (default: experiments.yaml)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-corpus", help="Synthesize the corpus and noise banks")
    sub.add_parser("pretrain-teacher", help="Fit pseudo-labels and pre-train the base teacher (T1)")
    sub.add_parser("adapt-teacher", help="Domain-adaptive pre-training of the teacher (T1')")

    p = sub.add_parser("distill", help="Distil one student")
    p.add_argument("--variant", default=None, help="Variant id from the grid (default: the [DISTILL] section)")
    p.add_argument("--adapted-teacher", action="store_true", help="With no --variant: distil from T1'")

    for name, text in (("probe", "Train the utterance-class probe on a model"),
                       ("eval", "Evaluate a probed model on the shared distorted test audio"),
                       ("visualize", "Split-averaged embeddings, silhouette and t-SNE for a model")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--model", required=True, help="T1, T1', LOGMEL, custom, or a variant id such as S4'")

    p = sub.add_parser("reproduce-matrix", help="Run every stage for the variant grid and write the summary")
    p.add_argument("--seeds", type=int, nargs="+", default=None, help="Seeds to run (default: the master seed)")
    p.add_argument("--depth-ablation", action="store_true", help="Also run the 1- and 3-layer student rows")
    return parser


def dispatch(args, orchestrator) -> int:
    logger = logging.getLogger(__name__)
    cmd = args.command
    if cmd == "gen-corpus":
        orchestrator.gen_corpus()
    elif cmd == "pretrain-teacher":
        orchestrator.pretrain_teacher()
    elif cmd == "adapt-teacher":
        orchestrator.adapt_teacher()
    elif cmd == "distill":
        model_id = orchestrator.distill(args.variant, adapted=args.adapted_teacher)
        logger.info(f"Student '{model_id}' ready")
    elif cmd == "probe":
        orchestrator.probe(args.model)
    elif cmd == "eval":
        orchestrator.evaluate(args.model)
    elif cmd == "visualize":
        orchestrator.visualize(args.model)
    elif cmd == "reproduce-matrix":
        paths = orchestrator.reproduce_matrix(args.seeds, jobs=args.jobs, depth_ablation=args.depth_ablation)
        for kind, path in paths.items():
            logger.info(f"REPORT ({kind}): {path}")
    return 0


def main(argv=None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        settings = Config(args.config)
        out = args.out or os.getenv("DISTORTBENCH_OUT")
        cfg = settings.to_run_config(seed=args.seed, output_dir=out)
        if args.jobs is not None:
            cfg = cfg.with_overrides(system={"jobs": args.jobs})
        level = os.getenv("DISTORTBENCH_LOG_LEVEL", cfg.system.log_level)
        setup_logging(args.debug, Path(cfg.system.output_dir) / "distortbench.log", level)

        from src.core.pipeline import ExperimentOrchestrator
        from src.core.variant_loader import VariantGrid
        grid = VariantGrid(args.experiments) if args.experiments else None
        orchestrator = ExperimentOrchestrator(cfg, settings.raw_text, args.config, grid=grid)
        return dispatch(args, orchestrator)
    except BenchError as e:
        logging.getLogger(__name__).error(f"{e.code}: {e.message}")
        emit_error(e.code, e.message, e.details)
        return EXIT_BENCH_ERROR
    except KeyboardInterrupt:
        logging.getLogger(__name__).info("Exiting...")
        return EXIT_INTERNAL
    except Exception as e:  # noqa: BLE001
        logging.getLogger(__name__).exception("Unexpected failure")
        emit_error("internal", f"{type(e).__name__}: {e}")
        return EXIT_INTERNAL


# ==========================================
#               ENTRY POINT
# ==========================================

if __name__ == "__main__":
    sys.exit(main())
