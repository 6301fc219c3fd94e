"""Dataset ingestion: transforms-json and COLMAP text layouts, PLY point clouds."""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import Camera
from .errors import DataError, InvalidInputError
from .geometry import Aabb
from .imageio import read_image

log = logging.getLogger(__name__)

FORMATS = ("transforms-json", "colmap-text")
# Blender/OpenGL camera axes (y up, z back) to ours (y down, z forward)
_GL_TO_CV = np.diag([1.0, -1.0, -1.0])


@dataclass
class Dataset:
    cameras: list
    images: list
    image_paths: list
    splits: list
    points: np.ndarray
    point_colors: np.ndarray
    root: Path = None
    fallback_points: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.cameras) == len(self.images) == len(self.image_paths) == len(self.splits)):
            raise InvalidInputError("cameras, images, paths and split tags must align")
        for cam, img, path in zip(self.cameras, self.images, self.image_paths):
            if img.shape != (cam.height, cam.width, 3):
                raise DataError(f"{path}: image is {img.shape[1]}x{img.shape[0]}, "
                                f"camera declares {cam.width}x{cam.height}")
        if len(self.points) < 1:
            raise DataError("dataset has no initial points")

    def __len__(self):
        return len(self.cameras)

    def views(self, split=None):
        """``(camera, image)`` pairs, optionally restricted to one split tag."""
        return [(c, img) for c, img, s in zip(self.cameras, self.images, self.splits)
                if split is None or s == split]

    def camera_aabb(self, margin=0.1):
        """Box around the camera centres, grown by ``margin`` times the largest extent."""
        centers = np.stack([c.center for c in self.cameras])
        lo, hi = centers.min(axis=0), centers.max(axis=0)
        # one margin for all axes, so a planar camera rig still gives a box
        pad = margin * float(np.max(hi - lo))
        return Aabb(lo - pad, hi + pad)


# -- PLY ---------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(path, fh):
    first = fh.readline()
    if first.strip() != b"ply":
        raise DataError(f"{path}:1: missing 'ply' magic line")
    fmt = None
    elements = []   # [name, count, [(prop, dtype or None for lists)]]
    line_no = 1
    while True:
        raw = fh.readline()
        line_no += 1
        if not raw:
            raise DataError(f"{path}:{line_no}: header ended without 'end_header'")
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "end_header":
            break
        if key == "format":
            if len(parts) != 3 or parts[1] not in ("ascii", "binary_little_endian"):
                raise DataError(f"{path}:{line_no}: unsupported PLY format {' '.join(parts[1:])!r}")
            fmt = parts[1]
        elif key == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise DataError(f"{path}:{line_no}: malformed element line")
            elements.append([parts[1], int(parts[2]), []])
        elif key == "property":
            if not elements:
                raise DataError(f"{path}:{line_no}: property before any element")
            if parts[1] == "list":
                if len(parts) != 5:
                    raise DataError(f"{path}:{line_no}: malformed list property")
                elements[-1][2].append((parts[4], None))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise DataError(f"{path}:{line_no}: unknown property type in {raw.strip()!r}")
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise DataError(f"{path}:{line_no}: unexpected header keyword {key!r}")
    if fmt is None:
        raise DataError(f"{path}: PLY header has no format line")
    return fmt, elements, line_no


def read_ply(path):
    """Vertex positions ``(M, 3)`` and colors ``(M, 3)`` in [0, 1].

    Supports ascii and binary little-endian files whose vertex element
    comes first. Missing color properties give mid-gray.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_ply_header(path, fh)
        if not elements or elements[0][0] != "vertex":
            raise DataError(f"{path}: the first PLY element must be 'vertex'")
        _, count, props = elements[0]
        names = [p for p, _ in props]
        if any(dt is None for _, dt in props):
            raise DataError(f"{path}: list properties on vertices are not supported")
        for axis in "xyz":
            if axis not in names:
                raise DataError(f"{path}: vertex element lacks property {axis!r}")
        dtype = np.dtype([(p, "<" + dt) for p, dt in props])
        if fmt == "binary_little_endian":
            buf = fh.read(dtype.itemsize * count)
            if len(buf) < dtype.itemsize * count:
                raise DataError(f"{path}: binary body holds {len(buf) // dtype.itemsize} of {count} vertices")
            data = np.frombuffer(buf, dtype=dtype, count=count)
        else:
            data = np.zeros(count, dtype=dtype)
            for i in range(count):
                raw = fh.readline()
                line_no = header_lines + 1 + i
                vals = raw.split()
                if len(vals) != len(props):
                    raise DataError(f"{path}:{line_no}: expected {len(props)} values, found {len(vals)}")
                try:
                    data[i] = tuple(float(v) if np.dtype(dt).kind == "f" else int(v)
                                    for v, (_, dt) in zip(vals, props))
                except ValueError:
                    raise DataError(f"{path}:{line_no}: non-numeric vertex value") from None
    points = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    if all(c in names for c in ("red", "green", "blue")):
        cols = np.stack([data["red"], data["green"], data["blue"]], axis=1)
        scale = 255.0 if cols.dtype.kind in "iu" else 1.0
        colors = cols.astype(np.float64) / scale
    else:
        colors = np.full_like(points, 0.5)
    if not np.all(np.isfinite(points)):
        raise DataError(f"{path}: non-finite vertex positions")
    return points, np.clip(colors, 0.0, 1.0)


def write_ply(path, points, colors=None, binary=True):
    points = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    if colors is None:
        colors = np.full(points.shape, 0.5)
    rgb = np.clip(np.floor(np.asarray(colors, dtype=np.float64) * 255 + 0.5), 0, 255).astype(np.uint8)
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {len(points)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            rec = np.zeros(len(points), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                               ("red", "u1"), ("green", "u1"), ("blue", "u1")])
            rec["x"], rec["y"], rec["z"] = points.T
            rec["red"], rec["green"], rec["blue"] = rgb.T
            fh.write(rec.tobytes())
        else:
            for p, c in zip(points, rgb):
                fields = [repr(float(v)) for v in p] + [str(int(v)) for v in c]
                fh.write((" ".join(fields) + "\n").encode("ascii"))


# -- transforms-json -----------------------------------------------------------------

def _orthonormalize(rot, where):
    u, s, vt = np.linalg.svd(rot)
    if np.max(np.abs(s - 1.0)) > 1e-3:
        raise DataError(f"{where}: camera rotation is not orthonormal (singular values {s.round(4).tolist()})")
    r = u @ vt
    if np.linalg.det(r) < 0:
        raise DataError(f"{where}: camera rotation is a reflection")
    return r


def camera_from_transform(c2w, fov_x, width, height, fov_y=None, where="transform"):
    """Camera from a Blender-convention camera-to-world matrix and horizontal FOV."""
    c2w = np.asarray(c2w, dtype=np.float64)
    if c2w.shape not in ((4, 4), (3, 4)):
        raise DataError(f"{where}: transform_matrix must be 4x4 or 3x4, got {c2w.shape}")
    rot_c2w = _orthonormalize(c2w[:3, :3] @ _GL_TO_CV, where)
    center = c2w[:3, 3]
    rot = rot_c2w.T
    fx = 0.5 * width / math.tan(0.5 * fov_x)
    fy = fx if fov_y is None else 0.5 * height / math.tan(0.5 * fov_y)
    return Camera(rot, -rot @ center, fx, fy, 0.5 * width, 0.5 * height, width, height)


def camera_to_transform(cam: Camera):
    """Inverse of :func:`camera_from_transform` for the extrinsics (4x4 list)."""
    c2w = np.eye(4)
    c2w[:3, :3] = cam.rotation.T @ _GL_TO_CV
    c2w[:3, 3] = cam.center
    return c2w.tolist()


def _resolve_image(root, file_path, where):
    p = root / file_path
    if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".npy"):
        candidates = [p]
    else:
        candidates = [p.with_name(p.name + ext) for ext in (".png", ".npy", ".jpg")]
    for c in candidates:
        if c.is_file():
            return c
    raise DataError(f"{where}: image {file_path!r} not found (tried {', '.join(str(c) for c in candidates)})")


def _load_transforms(root, background):
    split_files = [("train", root / "transforms_train.json"), ("test", root / "transforms_test.json")]
    present = [(s, p) for s, p in split_files if p.is_file()]
    if not present:
        single = root / "transforms.json"
        if not single.is_file():
            raise DataError(f"{root}: expected transforms_train.json/transforms_test.json or transforms.json")
        present = [("train", single)]
    cameras, images, paths, splits = [], [], [], []
    for split, path in present:
        try:
            meta = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        if "camera_angle_x" not in meta or "frames" not in meta:
            raise DataError(f"{path}: missing 'camera_angle_x' or 'frames'")
        fov_x = float(meta["camera_angle_x"])
        for i, frame in enumerate(meta["frames"]):
            where = f"{path} frame {i}"
            if "file_path" not in frame or "transform_matrix" not in frame:
                raise DataError(f"{where}: needs 'file_path' and 'transform_matrix'")
            img_path = _resolve_image(root, frame["file_path"], where)
            img = read_image(img_path, background)
            h, w = img.shape[:2]
            cameras.append(camera_from_transform(frame["transform_matrix"], fov_x, w, h,
                                                 meta.get("camera_angle_y"), where))
            images.append(img)
            paths.append(img_path)
            splits.append(split)
    return cameras, images, paths, splits


# -- COLMAP text ----------------------------------------------------------------------

def _data_lines(path):
    """``(line_no, tokens)`` for non-comment lines; blank lines are kept."""
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    out = []
    for no, line in enumerate(path.read_text().splitlines(), start=1):
        if line.lstrip().startswith("#"):
            continue
        out.append((no, line.split()))
    return out


def quat_wxyz_to_rotation(q):
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _read_colmap_cameras(path):
    intr = {}
    for no, tok in _data_lines(path):
        if not tok:
            continue
        where = f"{path}:{no}"
        try:
            cam_id, model, w, h = int(tok[0]), tok[1], int(tok[2]), int(tok[3])
            params = [float(v) for v in tok[4:]]
        except (ValueError, IndexError):
            raise DataError(f"{where}: malformed camera line") from None
        if model == "SIMPLE_PINHOLE" and len(params) == 3:
            f, cx, cy = params
            fx = fy = f
        elif model == "PINHOLE" and len(params) == 4:
            fx, fy, cx, cy = params
        elif model in ("SIMPLE_RADIAL", "RADIAL") and len(params) >= 4 and not any(params[3:]):
            f, cx, cy = params[:3]
            fx = fy = f
        elif model == "OPENCV" and len(params) == 8 and not any(params[4:]):
            fx, fy, cx, cy = params[:4]
        else:
            raise DataError(f"{where}: unsupported camera model {model} with {len(params)} parameters "
                            "(pinhole models only; distortion must be zero)")
        intr[cam_id] = (fx, fy, cx, cy, w, h)
    return intr


def _read_colmap_images(path):
    lines = _data_lines(path)
    entries = []
    i = 0
    while i < len(lines):
        no, tok = lines[i]
        if not tok:
            i += 1
            continue
        where = f"{path}:{no}"
        if len(tok) < 10:
            raise DataError(f"{where}: image line needs 10 fields, found {len(tok)}")
        try:
            q = [float(v) for v in tok[1:5]]
            t = [float(v) for v in tok[5:8]]
            cam_id = int(tok[8])
        except ValueError:
            raise DataError(f"{where}: malformed image line") from None
        entries.append((" ".join(tok[9:]), q, t, cam_id, where))
        i += 2      # skip the 2D points line that follows every image line
    return entries


def _read_colmap_points(path):
    pts, cols = [], []
    for no, tok in _data_lines(path):
        if not tok:
            continue
        try:
            pts.append([float(v) for v in tok[1:4]])
            cols.append([int(v) for v in tok[4:7]])
        except (ValueError, IndexError):
            raise DataError(f"{path}:{no}: malformed point line") from None
        if len(pts[-1]) != 3 or len(cols[-1]) != 3:
            raise DataError(f"{path}:{no}: point line needs X Y Z R G B")
    if not pts:
        return None
    return np.array(pts), np.array(cols, dtype=np.float64) / 255.0


def _colmap_dir(root):
    for cand in (root / "sparse" / "0", root / "sparse", root):
        if (cand / "cameras.txt").is_file() and (cand / "images.txt").is_file():
            return cand
    raise DataError(f"{root}: expected cameras.txt and images.txt under sparse/0, sparse or the root")


def _load_colmap(root, background, test_every):
    sparse = _colmap_dir(root)
    intr = _read_colmap_cameras(sparse / "cameras.txt")
    entries = sorted(_read_colmap_images(sparse / "images.txt"))
    image_dir = root / "images"
    cameras, images, paths, splits = [], [], [], []
    for k, (name, q, t, cam_id, where) in enumerate(entries):
        if cam_id not in intr:
            raise DataError(f"{where}: unknown camera id {cam_id}")
        fx, fy, cx, cy, w, h = intr[cam_id]
        img_path = image_dir / name
        img = read_image(img_path, background)
        cameras.append(Camera(quat_wxyz_to_rotation(q), np.array(t), fx, fy, cx, cy, w, h))
        images.append(img)
        paths.append(img_path)
        splits.append("test" if test_every and k % test_every == 0 else "train")
    pts = None
    if (sparse / "points3D.txt").is_file():
        pts = _read_colmap_points(sparse / "points3D.txt")
    return (cameras, images, paths, splits), pts


def detect_format(root):
    root = Path(root)
    if any((root / f).is_file() for f in ("transforms_train.json", "transforms.json")):
        return "transforms-json"
    if any((d / "images.txt").is_file() for d in (root / "sparse" / "0", root / "sparse", root)):
        return "colmap-text"
    raise DataError(f"{root}: no transforms_train.json, transforms.json or COLMAP images.txt found")


def load_dataset(root, format="auto", *, background=(0.0, 0.0, 0.0), test_every=8,
                 n_fallback_points=10000, fallback_aabb=None, seed=0) -> Dataset:
    """Load cameras, images and initial points from ``root``.

    Initial points come from ``points3d.ply`` / ``points3D.ply`` (or COLMAP
    ``points3D.txt``); without them, ``n_fallback_points`` random points are
    drawn inside ``fallback_aabb`` (default a cube of half-size 1.3).
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: dataset directory not found")
    if format == "auto":
        format = detect_format(root)
    if format not in FORMATS:
        raise InvalidInputError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    points = None
    if format == "transforms-json":
        cameras, images, paths, splits = _load_transforms(root, background)
    else:
        (cameras, images, paths, splits), points = _load_colmap(root, background, test_every)
    if not cameras:
        raise DataError(f"{root}: dataset has no frames")
    for name in ("points3d.ply", "points3D.ply"):
        if (root / name).is_file():
            points = read_ply(root / name)
            break
    fallback = points is None
    if fallback:
        box = fallback_aabb or Aabb.cube(1.3)
        rng = np.random.default_rng(seed)
        pts = rng.uniform(box.min_corner, box.max_corner, size=(n_fallback_points, 3))
        points = (pts, rng.uniform(0.0, 1.0, size=(n_fallback_points, 3)))
        log.info("no point cloud in %s; using %d random points", root, n_fallback_points)
    return Dataset(cameras, images, paths, splits, points[0], points[1], root, fallback,
                   {"format": format})
