"""CSV renderings of learned topology, attention choices, joint windows and
the wavelet branch response. Each function returns {filename: csv_text}."""

from __future__ import annotations

import csv
import io

import numpy as np

from .errors import ConfigError
from .graph import topology_score
from .model import SpikingGraphNet

DUMP_KINDS = ("topology", "attention", "window", "mwtf")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    return f"{float(x):.8g}"


def matrix_csv(mat) -> str:
    v = mat.shape[1]
    header = ["joint"] + [f"j{j}" for j in range(v)]
    return _csv(header, ([i] + [_num(x) for x in row] for i, row in enumerate(mat)))


def dump_topology(model: SpikingGraphNet) -> dict[str, str]:
    """One V x V score matrix per block plus their sum."""
    out = {}
    total = None
    for blk in model.blocks:
        score = topology_score(blk.pa)
        total = score if total is None else total + score
        out[f"topology_{blk.name}.csv"] = matrix_csv(score)
    out["topology_accumulated.csv"] = matrix_csv(total)
    return out


def _record_forward(model: SpikingGraphNet, sample):
    model.eval()
    model.set_record(True)
    try:
        model.forward(np.asarray(sample)[None])
    finally:
        model.set_record(False)


def dump_attention(model: SpikingGraphNet, sample) -> dict[str, str]:
    """Per block and frame: topology, similarity and fused score of every
    (target, source) pair, the chosen neighbours, and source in-degrees."""
    _record_forward(model, sample)
    scores_rows, nb_rows, deg_rows = [], [], []
    for blk in model.blocks:
        d = blk.tssa.diagnostics
        topo = d["topology"]
        sim, fused, nbrs = d["similarity"][0], d["scores"][0], d["neighbors"][0]
        t_len, v = sim.shape[0], sim.shape[-1]
        for t in range(t_len):
            for j in range(v):
                for i in range(v):
                    scores_rows.append([blk.name, t, j, i, _num(topo[i, j]), _num(sim[t, i, j]),
                                        _num(fused[t, i, j])])
                for r, src in enumerate(nbrs[t, j]):
                    nb_rows.append([blk.name, t, j, r, int(src)])
            counts = np.bincount(nbrs[t].ravel(), minlength=v)
            deg_rows.extend([blk.name, t, u, int(c)] for u, c in enumerate(counts))
    return {
        "attention_scores.csv": _csv(["block", "t", "target", "source", "topology", "similarity", "score"],
                                     scores_rows),
        "attention_neighbors.csv": _csv(["block", "t", "target", "rank", "source"], nb_rows),
        "attention_degrees.csv": _csv(["block", "t", "joint", "in_degree"], deg_rows),
    }


def dump_window(model: SpikingGraphNet) -> dict[str, str]:
    rows = []
    for blk in model.blocks:
        rows.extend([blk.name, j, _num(w)] for j, w in enumerate(blk.fsc.window.value))
    return {"window.csv": _csv(["block", "joint", "weight"], rows)}


def dump_mwtf(model: SpikingGraphNet, sample) -> dict[str, str]:
    """Filter bank taps, channel-averaged response map and its temporal energy."""
    bank = model.mwtf.bank
    bank_rows = []
    for name in ("lam0", "lam1", "gam0", "gam1"):
        mat = getattr(bank, name)
        for i in range(mat.shape[0]):
            bank_rows.extend([name, i, j, _num(mat[i, j])] for j in range(mat.shape[1]))
    _record_forward(model, sample)
    resp = model.mwtf.response[0]  # (T, V)
    resp_rows = [[t, v, _num(resp[t, v])] for t in range(resp.shape[0]) for v in range(resp.shape[1])]
    energy_rows = [[t, _num(np.sum(resp[t].astype(np.float64) ** 2))] for t in range(resp.shape[0])]
    return {
        "mwtf_filterbank.csv": _csv(["filter", "row", "col", "value"], bank_rows),
        "mwtf_response.csv": _csv(["t", "joint", "response"], resp_rows),
        "mwtf_energy.csv": _csv(["t", "energy"], energy_rows),
    }


def dump(model: SpikingGraphNet, what: str, sample=None) -> dict[str, str]:
    if what == "topology":
        return dump_topology(model)
    if what == "window":
        return dump_window(model)
    if sample is None:
        raise ConfigError(f"dump {what!r} needs an input sample")
    if what == "attention":
        return dump_attention(model, sample)
    if what == "mwtf":
        return dump_mwtf(model, sample)
    raise ConfigError(f"unknown dump kind {what!r}")
