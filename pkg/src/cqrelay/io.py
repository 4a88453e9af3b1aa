"""JSON file formats for channels, distributions and networks, plus atomic writes.

Every file carries ``format_version`` (``"MAJOR.MINOR"``); loaders reject an
unknown major version.  Complex matrices are nested lists of ``[re, im]``
pairs.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .netgen import MultiplexBayesNet
from .qcore import StateError
from .relay import RelayChannel

FORMAT_VERSION = "1.0"
SUPPORTED_MAJOR = 1


class FormatError(ValueError):
    pass


def _check_version(doc, kind):
    if not isinstance(doc, dict):
        raise FormatError(f"{kind} file must hold a JSON object")
    ver = doc.get("format_version")
    if ver is None:
        raise FormatError(f"{kind} file has no format_version")
    try:
        major = int(str(ver).split(".")[0])
    except ValueError:
        raise FormatError(f"unreadable format_version {ver!r}") from None
    if major != SUPPORTED_MAJOR:
        raise FormatError(f"unsupported format_version {ver!r} (expected {SUPPORTED_MAJOR}.x)")
    if doc.get("kind", kind) != kind:
        raise FormatError(f"expected a {kind!r} file, got kind {doc.get('kind')!r}")


def encode_matrix(m) -> list:
    m = np.asarray(m, dtype=np.complex128)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def decode_matrix(data) -> np.ndarray:
    a = np.asarray(data, dtype=float)
    if a.ndim != 3 or a.shape[-1] != 2:
        raise FormatError("matrix must be a nested list of [re, im] pairs")
    return a[..., 0] + 1j * a[..., 1]


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _load(path):
    with open(path, encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

def channel_to_json(ch: RelayChannel) -> dict:
    n1, n2 = ch.sizes
    return {
        "format_version": FORMAT_VERSION,
        "kind": "relay-channel",
        "alphabets": [int(n1), int(n2)],
        "dims": list(ch.dims),
        "outputs": [
            {"x1": a, "x2": b, "matrix": encode_matrix(ch.family[a, b])}
            for a in range(n1) for b in range(n2)
        ],
    }


def channel_from_json(doc) -> RelayChannel:
    _check_version(doc, "relay-channel")
    try:
        n1, n2 = (int(v) for v in doc["alphabets"])
        d2, d3 = (int(v) for v in doc["dims"])
        outputs = doc["outputs"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"channel file is missing or has malformed field: {exc}") from None
    D = d2 * d3
    fam = np.full((n1, n2, D, D), np.nan, dtype=np.complex128)
    seen = set()
    for entry in outputs:
        try:
            a, b = int(entry["x1"]), int(entry["x2"])
            m = decode_matrix(entry["matrix"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed channel output entry: {exc}") from None
        if not (0 <= a < n1 and 0 <= b < n2):
            raise FormatError(f"output cell (x1, x2) = ({a}, {b}) is outside the alphabets")
        if m.shape != (D, D):
            raise FormatError(f"matrix at (x1, x2) = ({a}, {b}) has shape {m.shape}, expected {(D, D)}")
        if (a, b) in seen:
            raise FormatError(f"duplicate output cell (x1, x2) = ({a}, {b})")
        seen.add((a, b))
        fam[a, b] = m
    for a in range(n1):
        for b in range(n2):
            if (a, b) not in seen:
                raise FormatError(f"missing matrix for output cell (x1, x2) = ({a}, {b})")
    try:
        return RelayChannel(fam, (d2, d3))
    except StateError as exc:
        raise FormatError(str(exc)) from None


def load_channel(path) -> RelayChannel:
    return channel_from_json(_load(path))


def save_channel(path, ch: RelayChannel) -> None:
    atomic_write(path, dumps(channel_to_json(ch)))


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------

def dist_to_json(p) -> dict:
    p = np.asarray(p, dtype=float)
    labels = ["U", "X1", "X2"] if p.ndim == 3 else ["X1", "X2"][: p.ndim]
    return {"format_version": FORMAT_VERSION, "kind": "distribution", "labels": labels,
            "p": p.tolist()}


def dist_from_json(doc) -> np.ndarray:
    _check_version(doc, "distribution")
    try:
        p = np.asarray(doc["p"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"distribution file is missing or has malformed field: {exc}") from None
    if np.any(p < -1e-10) or abs(p.sum() - 1.0) > 1e-10:
        raise FormatError("distribution must be non-negative and sum to 1")
    return np.clip(p, 0.0, None)


def load_dist(path) -> np.ndarray:
    return dist_from_json(_load(path))


def save_dist(path, p) -> None:
    atomic_write(path, dumps(dist_to_json(p)))


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

def _msg_key(k):
    return tuple(k) if isinstance(k, list) else k


def network_to_json(net: MultiplexBayesNet) -> dict:
    def key(j):
        return list(j) if isinstance(j, tuple) else j
    return {
        "format_version": FORMAT_VERSION,
        "kind": "network",
        "vertices": [{"name": v, "alphabet": net.alphabets[v]} for v in net.vertices],
        "edges": [list(e) for e in net.edges],
        "cpds": {v: np.asarray(net.cpds[v]).ravel().tolist() for v in net.vertices},
        "messages": [{"name": key(j), "size": s} for j, s in net.msg_sizes.items()],
        "ind": {v: [key(j) for j in net.ordered_ind(v)] for v in net.vertices},
    }


def network_from_json(doc) -> MultiplexBayesNet:
    """Build a network; CPDs are row-major over ``(parents..., own value)``.

    Structural problems are left for :func:`cqrelay.netgen.validate`.
    """
    _check_version(doc, "network")
    try:
        vertices = [v["name"] for v in doc["vertices"]]
        alph = {v["name"]: int(v["alphabet"]) for v in doc["vertices"]}
        edges = [tuple(e) for e in doc["edges"]]
        sizes = {_msg_key(m["name"]): int(m["size"]) for m in doc["messages"]}
        ind = {v: {_msg_key(j) for j in doc["ind"].get(v, [])} for v in vertices}
        raw = doc["cpds"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"network file is missing or has malformed field: {exc}") from None
    cpds = {}
    for v in vertices:
        if v not in raw:
            continue
        parents = [a for a, b in edges if b == v]
        shape = tuple(alph.get(u, 0) for u in parents) + (alph[v],)
        flat = np.asarray(raw[v], dtype=float)
        if flat.size != int(np.prod(shape)):
            raise FormatError(f"CPD of {v!r} has {flat.size} entries, expected {int(np.prod(shape))}")
        cpds[v] = flat.reshape(shape)
    return MultiplexBayesNet(alphabets=alph, edges=edges, cpds=cpds, msg_sizes=sizes, ind=ind,
                             vertices=tuple(vertices))


def load_network(path) -> MultiplexBayesNet:
    return network_from_json(_load(path))


def save_network(path, net: MultiplexBayesNet) -> None:
    atomic_write(path, dumps(network_to_json(net)))
