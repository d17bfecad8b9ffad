"""Plot-ready data export: CSV tables, JSON sidecars and rendered figures."""

from __future__ import annotations

import json
import os

import numpy as np

from .models import make_model, psd_estimate


def _write_table(out_dir, name, header, rows, description, axes=None):
    path = os.path.join(out_dir, name + ".csv")
    np.savetxt(path, np.atleast_2d(rows), fmt="%.17g", delimiter=",", header=",".join(header),
               comments="")
    side = {"file": name + ".csv", "columns": list(header), "description": description}
    if axes:
        side["axes"] = axes
    with open(os.path.join(out_dir, name + ".json"), "w") as fh:
        json.dump(side, fh, indent=2)
    return [name + ".csv", name + ".json"]


def _model_from_report(report):
    mid = report.meta.get("model_id")
    if mid is None:
        return None
    try:
        return make_model(mid, report.meta.get("model_params"))
    except Exception:
        return None


def _channels(model, y):
    if model is None:
        return ["y"], np.arange(y.shape[1], dtype=float)
    return model.layout()


def _savefig(fig, out_dir, name):
    fig.savefig(os.path.join(out_dir, name), dpi=110, metadata={"Software": None})
    import matplotlib.pyplot as plt
    plt.close(fig)
    return name


def export_plots(report, out_dir, model=None, figures=True):
    """Write every plot table for a report; returns ``{"files", "omitted"}``."""
    os.makedirs(out_dir, exist_ok=True)
    arr = report.arrays
    if not arr:
        raise ValueError("report carries no arrays; rebuild it with assemble_report")
    psi, labels, y, x = arr["psi"], np.asarray(arr["labels"]), arr["y"], arr["x"]
    model = model or _model_from_report(report)
    names, t = _channels(model, y)
    nt = len(t)
    K = len(report.patterns)
    files, omitted = [], []

    cols = [f"psi{j + 1}" for j in range(psi.shape[1])]
    files += _write_table(out_dir, "feature_scatter", cols + ["label"],
                          np.column_stack([psi, labels]), "feature coordinates and pattern label",
                          {"x": "psi1", "y": "psi2"})
    if report.jump is not None:
        j = report.jump
        files += _write_table(out_dir, "jump_curve", ["K", "d_K", "ell"],
                              np.column_stack([j["k_values"], j["distortions"], j["ell"]]),
                              "jump-method distortion and transformed jump per cluster count",
                              {"x": "K", "y": "ell"})
    chars = arr.get("characteristic", {})
    char_cols, char_data = ["t"], [t]
    for k in range(K):
        if k not in chars:
            continue
        row = y[chars[k]].reshape(len(names), nt)
        for c, nm in enumerate(names):
            char_cols.append(f"pattern{k + 1}_{nm}")
            char_data.append(row[c])
    files += _write_table(out_dir, "characteristic_trajectories", char_cols,
                          np.column_stack(char_data), "characteristic response of each pattern",
                          {"x": "t"})
    designated = getattr(model, "designated_inputs", {}) if model is not None else {}
    for k in range(K):
        members = np.flatnonzero(labels == k)
        if len(members) == 0:
            omitted.append(f"pattern{k + 1}: empty")
            continue
        Yk = y[members].reshape(len(members), len(names), nt)
        q = np.percentile(Yk, [5, 50, 95], axis=0)
        hdr, data = ["t"], [t]
        for c, nm in enumerate(names):
            for lab, qq in zip(("p05", "p50", "p95"), q):
                hdr.append(f"{nm}_{lab}")
                data.append(qq[c])
        files += _write_table(out_dir, f"envelopes_pattern{k + 1}", hdr, np.column_stack(data),
                              "pointwise 5/50/95 percentiles of pattern responses", {"x": "t"})
        if designated:
            files += _write_table(out_dir, f"x_scatter_pattern{k + 1}", list(designated),
                                  x[members][:, list(designated.values())],
                                  "designated input coordinates of pattern samples")
    psd = _psd_tables(model, x, labels, K, out_dir)
    files += psd
    if figures:
        files += _figures(report, out_dir, psi, labels, y, x, names, t, designated, model, K)
    return {"files": files, "omitted": omitted}


def _psd_tables(model, x, labels, K, out_dir):
    ground = getattr(model, "ground", None)
    if ground is None:
        return []
    nf = 2 * ground.n_freq
    hdr, data = ["omega"], []
    omega = None
    for k in range(K):
        members = np.flatnonzero(labels == k)
        if len(members) < 2:
            continue
        ag = ground.synthesize(x[members, :nf])
        omega, G = psd_estimate(ag, ground.dt)
        hdr.append(f"pattern{k + 1}")
        data.append(G / 2)
    if omega is None:
        return []
    from .models import kanai_tajimi_psd

    hdr.append("target")
    data.append(kanai_tajimi_psd(omega, form=ground.psd_form, **ground.psd_params))
    return _write_table(out_dir, "psd_overlay", hdr, np.column_stack([omega] + data),
                        "two-sided ground-motion PSD per pattern and target spectrum",
                        {"x": "omega [rad/s]", "y": "S(omega)"})


def _figures(report, out_dir, psi, labels, y, x, names, t, designated, model, K):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = []
    n = psi.shape[1]
    pairs = [(0, 1), (0, 2), (1, 2)][: max(1, min(3, n * (n - 1) // 2))] if n > 1 else [(0, 0)]
    fig, axes = plt.subplots(1, len(pairs), figsize=(4 * len(pairs), 3.6), squeeze=False)
    for ax, (a, b) in zip(axes[0], pairs):
        ax.scatter(psi[:, a], psi[:, b], c=labels, s=4, cmap="tab10")
        ax.set_xlabel(f"psi{a + 1}")
        ax.set_ylabel(f"psi{b + 1}")
    fig.tight_layout()
    out.append(_savefig(fig, out_dir, "feature_scatter.png"))

    if report.jump is not None:
        fig, ax = plt.subplots(figsize=(4.5, 3.4))
        ax.plot(report.jump["k_values"], report.jump["ell"], "o-")
        ax.set_xlabel("K")
        ax.set_ylabel("jump")
        fig.tight_layout()
        out.append(_savefig(fig, out_dir, "jump_curve.png"))

    nt = len(t)
    chars = report.arrays.get("characteristic", {})
    fig, axes = plt.subplots(len(names), 1, figsize=(7, 2.4 * len(names)), squeeze=False)
    for k in range(K):
        if k not in chars:
            continue
        row = y[chars[k]].reshape(len(names), nt)
        for c in range(len(names)):
            axes[c, 0].plot(t, row[c], lw=0.8, label=f"pattern {k + 1}")
    for c, nm in enumerate(names):
        axes[c, 0].set_ylabel(nm)
    axes[0, 0].legend(fontsize=7)
    axes[-1, 0].set_xlabel("t")
    fig.tight_layout()
    out.append(_savefig(fig, out_dir, "characteristic.png"))

    fig, axes = plt.subplots(len(names), max(K, 1), figsize=(3.2 * max(K, 1), 2.2 * len(names)),
                             squeeze=False)
    for k in range(K):
        members = np.flatnonzero(labels == k)
        if len(members) == 0:
            continue
        Yk = y[members].reshape(len(members), len(names), nt)
        q = np.percentile(Yk, [5, 50, 95], axis=0)
        for c in range(len(names)):
            ax = axes[c, k]
            ax.fill_between(t, q[0, c], q[2, c], alpha=0.3)
            ax.plot(t, q[1, c], lw=0.8)
            if c == 0:
                ax.set_title(f"pattern {k + 1}")
    fig.tight_layout()
    out.append(_savefig(fig, out_dir, "envelopes.png"))

    if designated:
        keys = list(designated)
        pairs = [(keys[i], keys[j]) for i in range(len(keys)) for j in range(i + 1, len(keys))] or [(keys[0], keys[0])]
        fig, axes = plt.subplots(1, len(pairs), figsize=(4 * len(pairs), 3.6), squeeze=False)
        for ax, (a, b) in zip(axes[0], pairs):
            for k in range(K):
                m = labels == k
                ax.scatter(x[m, designated[a]], x[m, designated[b]], s=4, label=f"pattern {k + 1}")
            ax.set_xlabel(a)
            ax.set_ylabel(b)
        axes[0, 0].legend(fontsize=7)
        fig.tight_layout()
        out.append(_savefig(fig, out_dir, "x_scatter.png"))

    psd_path = os.path.join(out_dir, "psd_overlay.csv")
    if os.path.exists(psd_path):
        tab = np.loadtxt(psd_path, delimiter=",", skiprows=1, ndmin=2)
        with open(psd_path) as fh:
            hdr = fh.readline().strip().split(",")
        fig, ax = plt.subplots(figsize=(5, 3.6))
        for j in range(1, tab.shape[1]):
            ax.plot(tab[:, 0], tab[:, j], lw=1.5 if hdr[j] == "target" else 0.8, label=hdr[j])
        ax.set_xlim(0, 50)
        ax.set_xlabel("omega [rad/s]")
        ax.legend(fontsize=7)
        fig.tight_layout()
        out.append(_savefig(fig, out_dir, "psd.png"))
    return out
