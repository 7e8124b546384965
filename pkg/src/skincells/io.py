"""File formats: OBJ meshes, skeleton/pose JSON, the compact binary field,
baked-weight JSON, colored PLY debug exports and loss-history CSV.

All lengths are centimeters end to end; loaders take a ``scale`` factor for
assets authored in other units. Binary formats are little-endian; the field
file stores every parameter as a 32-bit float, so a typical biped field is
around 20 KB.
"""

from __future__ import annotations

import csv
import json
import struct
import warnings
import zlib

import numpy as np

from .errors import SkinCellsError
from .field import SkinCellSet, cell_stride
from .mesh import Mesh
from .skeleton import DEFAULT_LIMIT_DEG, Skeleton
from .skinning import BakedWeights

FIELD_MAGIC = b"SKCL"
FIELD_VERSION = 1
_FIELD_HEADER = struct.Struct("<4s5I")

POSE_TRANSLATION_KEY = "translate"  # reserved name in pose files

# 24 fixed, saturated colors; weight blends interpolate between them
PALETTE = np.array(
    [
        (255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0),
        (255, 0, 255), (0, 255, 255), (255, 128, 0), (128, 0, 255),
        (0, 128, 255), (128, 255, 0), (255, 0, 128), (0, 255, 128),
        (128, 64, 0), (64, 0, 128), (0, 128, 64), (192, 192, 192),
        (128, 0, 0), (0, 128, 0), (0, 0, 128), (128, 128, 0),
        (128, 0, 128), (0, 128, 128), (255, 192, 128), (64, 64, 64),
    ],
    dtype=np.float64,
)


# --- OBJ ----------------------------------------------------------------------


def load_obj(path, scale: float = 1.0) -> Mesh:
    """Parse v/f records; polygons are fan-triangulated, normals/uvs ignored."""
    vertices = []
    triangles = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise SkinCellsError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError as err:
                    raise SkinCellsError(f"{path}:{lineno}: bad vertex coordinate") from err
            elif tag == "f":
                if len(parts) < 4:
                    raise SkinCellsError(f"{path}:{lineno}: face needs at least 3 vertices")
                try:
                    idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                except ValueError as err:
                    raise SkinCellsError(f"{path}:{lineno}: bad face index") from err
                if any(i < 0 for i in idx):
                    raise SkinCellsError(f"{path}:{lineno}: face indices must be positive")
                for a, b in zip(idx[1:-1], idx[2:]):
                    triangles.append((idx[0], a, b))
    verts = np.asarray(vertices, dtype=np.float64) * scale
    tris = np.asarray(triangles, dtype=np.int64)
    if tris.size and tris.max() >= len(verts):
        raise SkinCellsError(f"{path}: face references missing vertex {tris.max() + 1}")
    try:
        return Mesh(verts.reshape(-1, 3), tris.reshape(-1, 3))
    except SkinCellsError as err:
        raise SkinCellsError(f"{path}: {err}") from err


def save_obj(path, positions, triangles) -> None:
    positions = np.asarray(positions, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    with open(path, "w", encoding="utf-8") as fh:
        for p in positions:
            fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        for t in triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


# --- skeleton JSON --------------------------------------------------------------


def load_skeleton(path, scale: float = 1.0) -> Skeleton:
    """Schema: {"joints": [{"name", "parent", "offset": [x,y,z],
    "limits": {"x": [lo,hi], "y": ..., "z": ...}}, ...]}.

    Missing limits default to +-45 degrees per axis (with a warning).
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise SkinCellsError(f"{path}: invalid JSON ({err})") from err
    joints = data.get("joints")
    if not isinstance(joints, list) or not joints:
        raise SkinCellsError(f"{path}: expected a non-empty 'joints' list")

    names, parents, offsets, limits = [], [], [], []
    for i, j in enumerate(joints):
        try:
            names.append(str(j["name"]))
            parents.append(int(j["parent"]))
            offsets.append([float(x) for x in j["offset"]])
        except (KeyError, TypeError, ValueError) as err:
            raise SkinCellsError(f"{path}: joint {i}: missing or bad field ({err})") from err
        lim = j.get("limits")
        if lim is None:
            warnings.warn(
                f"{path}: joint '{names[-1]}' has no limits, "
                f"defaulting to +-{DEFAULT_LIMIT_DEG:g} degrees",
                stacklevel=2,
            )
            limits.append([[-DEFAULT_LIMIT_DEG, DEFAULT_LIMIT_DEG]] * 3)
        else:
            try:
                limits.append([[float(lim[a][0]), float(lim[a][1])] for a in ("x", "y", "z")])
            except (KeyError, TypeError, ValueError) as err:
                raise SkinCellsError(f"{path}: joint '{names[-1]}': bad limits ({err})") from err

    parents_arr = np.asarray(parents, dtype=np.int64)
    _reject_parent_cycles(path, parents_arr)
    try:
        return Skeleton(
            names=names,
            parents=parents_arr,
            offsets=np.asarray(offsets, dtype=np.float64) * scale,
            limits=np.asarray(limits, dtype=np.float64),
        )
    except SkinCellsError as err:
        raise SkinCellsError(f"{path}: {err}") from err


def _reject_parent_cycles(path, parents):
    n = len(parents)
    for start in range(n):
        seen = set()
        j = start
        while j >= 0:
            if j in seen:
                raise SkinCellsError(f"{path}: cycle detected in joint parents at joint {j}")
            seen.add(j)
            if j >= n:
                raise SkinCellsError(f"{path}: parent index {j} out of range")
            j = int(parents[j])


def save_skeleton(path, skeleton: Skeleton) -> None:
    joints = []
    for i in range(skeleton.n_joints):
        joints.append(
            {
                "name": skeleton.names[i],
                "parent": int(skeleton.parents[i]),
                "offset": [float(x) for x in skeleton.offsets[i]],
                "limits": {
                    axis: [float(skeleton.limits[i, a, 0]), float(skeleton.limits[i, a, 1])]
                    for a, axis in enumerate("xyz")
                },
            }
        )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"joints": joints}, fh, indent=1)


# --- binary field file ----------------------------------------------------------


def _names_hash(names) -> int:
    if not names:
        return 0
    return zlib.crc32("\x00".join(names).encode("utf-8")) & 0xFFFFFFFF


def save_field(path, cells: SkinCellSet) -> None:
    """Header (magic, version, n, m, l, joint-name hash) + f32 parameters.

    Payload size is exactly 4 * n * (10 m + 2) bytes.
    """
    header = _FIELD_HEADER.pack(
        FIELD_MAGIC,
        FIELD_VERSION,
        cells.n_joints,
        cells.n_sites,
        cells.l,
        _names_hash(cells.joint_names),
    )
    payload = cells.pack().astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_field(path, skeleton: Skeleton | None = None) -> SkinCellSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _FIELD_HEADER.size:
        raise SkinCellsError(f"{path}: truncated field file")
    magic, version, n, m, l, names_hash = _FIELD_HEADER.unpack_from(blob)
    if magic != FIELD_MAGIC:
        raise SkinCellsError(f"{path}: not a field file (bad magic {magic!r})")
    if version != FIELD_VERSION:
        raise SkinCellsError(f"{path}: unsupported field version {version}")
    expected = _FIELD_HEADER.size + 4 * n * cell_stride(m)
    if len(blob) != expected:
        raise SkinCellsError(
            f"{path}: wrong payload size ({len(blob)} bytes, expected {expected})"
        )
    flat = np.frombuffer(blob, dtype="<f4", offset=_FIELD_HEADER.size).astype(np.float64)
    joint_names = None
    if skeleton is not None:
        if skeleton.n_joints != n:
            raise SkinCellsError(
                f"{path}: field has {n} joints, skeleton has {skeleton.n_joints}"
            )
        if names_hash and names_hash != _names_hash(skeleton.names):
            warnings.warn(
                f"{path}: joint-name hash does not match the provided skeleton",
                stacklevel=2,
            )
        joint_names = list(skeleton.names)
    return SkinCellSet.unpack(flat, n, m, l, joint_names=joint_names)


# --- baked weights ---------------------------------------------------------------


def export_weights(path, baked: BakedWeights) -> None:
    """Per vertex, an array of [joint, weight] pairs (7 significant digits)."""
    rows = []
    for idx_row, w_row in zip(baked.indices, baked.weights):
        rows.append(
            [[int(j), float(f"{w:.7g}")] for j, w in zip(idx_row, w_row) if j >= 0]
        )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"n_joints": baked.n_joints, "vertices": rows}, fh)


def load_weights(path) -> BakedWeights:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise SkinCellsError(f"{path}: invalid JSON ({err})") from err
    try:
        n_joints = int(data["n_joints"])
        rows = data["vertices"]
        width = max(1, max((len(r) for r in rows), default=1))
        indices = np.full((len(rows), width), -1, dtype=np.int64)
        weights = np.zeros((len(rows), width))
        for v, row in enumerate(rows):
            for k, (j, w) in enumerate(row):
                indices[v, k] = int(j)
                weights[v, k] = float(w)
    except (KeyError, TypeError, ValueError) as err:
        raise SkinCellsError(f"{path}: malformed weights file ({err})") from err
    return BakedWeights(n_joints=n_joints, indices=indices, weights=weights)


# --- colored PLY -----------------------------------------------------------------


def weight_colors(weights: np.ndarray) -> np.ndarray:
    """Blend the fixed palette by per-vertex weights -> uint8 RGB."""
    weights = np.asarray(weights, dtype=np.float64)
    colors = PALETTE[np.arange(weights.shape[1]) % len(PALETTE)]
    blended = weights @ colors
    return np.rint(np.clip(blended, 0.0, 255.0)).astype(np.uint8)


def export_colored_ply(path, mesh: Mesh, weights) -> None:
    """Binary little-endian PLY with per-vertex RGB from the weight blend.

    ``weights`` may be a dense (V, n) array or :class:`BakedWeights`.
    """
    dense = weights.to_dense() if isinstance(weights, BakedWeights) else np.asarray(weights)
    if dense.shape[0] != mesh.n_vertices:
        raise SkinCellsError("weights and mesh disagree on vertex count")
    rgb = weight_colors(dense)
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"element vertex {mesh.n_vertices}",
            "property float x",
            "property float y",
            "property float z",
            "property uchar red",
            "property uchar green",
            "property uchar blue",
            f"element face {mesh.n_triangles}",
            "property list uchar int vertex_indices",
            "end_header",
            "",
        ]
    )
    vert = np.zeros(
        mesh.n_vertices,
        dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)],
    )
    vert["xyz"] = mesh.vertices.astype("<f4")
    vert["rgb"] = rgb
    face = np.zeros(mesh.n_triangles, dtype=[("count", "u1"), ("idx", "<i4", 3)])
    face["count"] = 3
    face["idx"] = mesh.triangles.astype("<i4")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(vert.tobytes())
        fh.write(face.tobytes())


# --- pose JSON -------------------------------------------------------------------


def load_pose(path, skeleton: Skeleton):
    """JSON map of joint name -> [x, y, z] degrees; missing joints stay 0.

    The reserved key ``"translate"`` moves the root (cm). Angles outside the
    joint limits are accepted with a warning; limits constrain sampling, not
    user poses. Returns (pose, root_translation).
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise SkinCellsError(f"{path}: invalid JSON ({err})") from err
    if not isinstance(data, dict):
        raise SkinCellsError(f"{path}: expected a JSON object")
    pose = np.zeros((skeleton.n_joints, 3))
    translation = np.zeros(3)
    index = {name: i for i, name in enumerate(skeleton.names)}
    for key, val in data.items():
        if key == POSE_TRANSLATION_KEY:
            translation = np.asarray(val, dtype=np.float64).reshape(3)
            continue
        if key not in index:
            raise SkinCellsError(f"{path}: unknown joint name '{key}'")
        angles = np.asarray(val, dtype=np.float64).reshape(3)
        i = index[key]
        lo, hi = skeleton.limits[i, :, 0], skeleton.limits[i, :, 1]
        if (angles < lo).any() or (angles > hi).any():
            warnings.warn(
                f"{path}: pose for joint '{key}' exceeds its limits",
                stacklevel=2,
            )
        pose[i] = angles
    return pose, translation


# --- loss history ----------------------------------------------------------------


def save_history(path, history: np.ndarray) -> None:
    """CSV with header step,loss,loss_dm,loss_loc,loss_sp, one row per step."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "loss_dm", "loss_loc", "loss_sp"])
        for row in np.asarray(history):
            writer.writerow([int(row[0])] + [f"{x:.17g}" for x in row[1:]])
