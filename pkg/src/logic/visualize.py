import logging
from pathlib import Path
from typing import Any, Dict, Optional

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from ..audio.augmentor import VIZ_CONDITIONS  # noqa: E402
from ..core.config_loader import EvalConfig  # noqa: E402
from ..core.file_utils import write_csv, write_json  # noqa: E402
from ..models.base import BaseEncoder  # noqa: E402
from .evaluation import ConditionCache, condition_reprs  # noqa: E402
from .invariance import EmbeddingMatrix, silhouette, split_average  # noqa: E402
from .tsne import tsne  # noqa: E402

logger = logging.getLogger(__name__)

CONDITION_COLORS = {
    "clean": "tab:green", "musan_like": "tab:blue", "gaussian": "tab:gray",
    "reverberation": "tab:purple", "fsd_like": "tab:orange", "dns_like": "tab:red",
}


def plot_embedding(frame: pd.DataFrame, title: str, path: Path):
    fig, ax = plt.subplots(figsize=(6, 6))
    for cond in VIZ_CONDITIONS:
        sub = frame[frame["condition"] == cond]
        ax.scatter(sub["x"], sub["y"], s=10, alpha=0.8, label=cond, color=CONDITION_COLORS[cond])
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    ax.legend(loc="best", fontsize=8, markerscale=1.5)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def visualize_model(model: BaseEncoder, cache: ConditionCache, cfg: EvalConfig, model_id: str, seed: int,
                    out_dir: Optional[Path] = None, stamp: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
    """
    Split-averaged embeddings under the six visualization conditions, their
    silhouette over condition labels, and a 2-D t-SNE map.
    """
    _, reps, _ = condition_reprs(model, cache, VIZ_CONDITIONS)
    emb: EmbeddingMatrix = split_average(reps, cfg.n_splits)
    sil = silhouette(emb.matrix, emb.condition)
    result = tsne(emb.matrix, perplexity=cfg.tsne_perplexity, iters=cfg.tsne_iters, seed=seed)

    summary = {
        "model_id": model_id, "seed": seed, "rows": int(len(emb.matrix)), "silhouette": sil,
        "tsne_initial_kl": result.initial_kl, "tsne_final_kl": result.final_kl,
        "max_perplexity_error": float(abs(result.row_perplexity - cfg.tsne_perplexity).max()),
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(out_dir / "embeddings.csv", emb.to_frame(), stamp)
        coords = pd.DataFrame({"split": emb.split_index, "condition": emb.condition,
                               "x": result.embedding[:, 0], "y": result.embedding[:, 1]})
        write_csv(out_dir / "tsne.csv", coords, stamp)
        plot_embedding(coords, f"{model_id} (seed {seed})", out_dir / "tsne.png")
        write_json(out_dir / "visualization.json", summary)
    logger.info(f"   {model_id}: silhouette={sil:.3f}, t-SNE KL {result.initial_kl:.3f} -> {result.final_kl:.3f}")
    return summary
