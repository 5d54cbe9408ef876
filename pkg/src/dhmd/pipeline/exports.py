"""Run-directory exports: edge trajectories, dictionary activations,
attention maps, and static plots with their underlying CSV/JSON data."""

import json
from pathlib import Path

import numpy as np


def _f32(x):
    return float(np.float32(x))


def append_edge_line(path, epoch, unit, w):
    """One JSON line per epoch per GD-Unit: EMA of batch-mean edge weights."""
    row = {"epoch": int(epoch), "unit": unit,
           "W": [[_f32(v) for v in r] for r in np.asarray(w)]}
    with open(path, "a") as fh:
        fh.write(json.dumps(row) + "\n")


def read_edge_lines(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_activations(path, rows):
    """Overwrite the activation table (latest state of the dictionaries)."""
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps({
                "space": row["space"],
                "modality": row["modality"],
                "class": int(row["class"]),
                "alpha": [_f32(v) for v in row["alpha"]],
            }) + "\n")


def write_attention(out_dir, sample_id, pair_maps):
    """One JSON file per sample: array of {pair, weights} objects."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for (src, tgt), weights in sorted(pair_maps.items()):
        entries.append({"pair": f"{src}->{tgt}",
                        "weights": [[_f32(v) for v in row]
                                    for row in np.asarray(weights)]})
    path = out / f"{sample_id}.json"
    with open(path, "w") as fh:
        json.dump(entries, fh)
        fh.write("\n")
    return path


def plot_loss_curves(metrics_rows, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not metrics_rows:
        return
    epochs = [r["epoch"] for r in metrics_rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key in ("loss_total", "loss_task", "loss_dec", "loss_dtl", "loss_dic"):
        vals = [r.get(key) for r in metrics_rows]
        if any(v is not None for v in vals):
            ax.plot(epochs, vals, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_edge_trajectories(edge_rows, path, modalities=("L", "V", "A")):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    units = sorted({r["unit"] for r in edge_rows})
    if not units:
        return
    fig, axes = plt.subplots(1, len(units), figsize=(6 * len(units), 4),
                             squeeze=False)
    for ax, unit in zip(axes[0], units):
        rows = [r for r in edge_rows if r["unit"] == unit]
        epochs = [r["epoch"] for r in rows]
        for i, src in enumerate(modalities):
            for j, tgt in enumerate(modalities):
                if i == j:
                    continue
                ax.plot(epochs, [r["W"][i][j] for r in rows],
                        label=f"{src}->{tgt}")
        ax.set_title(unit)
        ax.set_xlabel("epoch")
        ax.set_ylabel("edge weight")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
