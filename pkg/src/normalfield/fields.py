"""The learnable scene: four voxel grids plus SH environment coefficients.

Checkpoint format (binary, little-endian):
    magic "NFLD", u32 version = 1, then named blocks until EOF.
    Grid block:  u32 name length, UTF-8 name, u32 x 3 resolution,
                 f64 x 6 bbox (min xyz, max xyz), u32 channels,
                 f32 vertex data with x varying fastest (z outermost),
                 channels contiguous per vertex.
    Env block:   name "env_sh", u32 degree, f32 RGB triples per
                 coefficient in basis order.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .grids import DEFAULT_B_EMPTY, VoxelGrid
from .shading import EnvMapSH, n_sh_coeffs

MAGIC = b"NFLD"
VERSION = 1


@dataclass
class SceneFields:
    density: VoxelGrid  # pre-activation b, 1 channel, empty outside
    normal: VoxelGrid  # raw (unnormalized) predicted normals, 3 channels
    diffuse: VoxelGrid  # raw diffuse color, sigmoid-activated, 3 channels
    tint: VoxelGrid  # raw specular tint, sigmoid-activated, 3 channels
    env: EnvMapSH

    def blocks(self):
        """name -> flat parameter array, shared memory with the grids."""
        return {
            "density": self.density.data.reshape(-1, 1),
            "normal": self.normal.data.reshape(-1, 3),
            "diffuse": self.diffuse.data.reshape(-1, 3),
            "tint": self.tint.data.reshape(-1, 3),
            "env_sh": self.env.coeffs,
        }


def init_fields(resolution, bbox_min, bbox_max, sh_degree=3, seed=0):
    """Fresh fields: near-empty density, small random normals, neutral light."""
    rng = np.random.default_rng(seed)
    res = (resolution,) * 3 if np.isscalar(resolution) else tuple(resolution)

    def grid(channels, low, high, mode="clamp"):
        data = rng.uniform(low, high, size=res + (channels,))
        return VoxelGrid(
            data=data,
            bbox_min=bbox_min,
            bbox_max=bbox_max,
            outside_mode=mode,
            empty_value=DEFAULT_B_EMPTY,
        )

    return SceneFields(
        density=grid(1, -4.5, -3.5, mode="empty"),
        normal=grid(3, -0.1, 0.1),
        diffuse=grid(3, -1.0, 1.0),
        tint=grid(3, -1.0, 1.0),
        env=EnvMapSH(degree=sh_degree, coeffs=np.zeros((n_sh_coeffs(sh_degree), 3))),
    )


def _grid_to_disk_order(data):
    # (nx, ny, nz, C) -> z outermost, x fastest, channels innermost
    return np.ascontiguousarray(data.transpose(2, 1, 0, 3), dtype=np.float32)


def _grid_from_disk_order(flat, res, channels):
    nx, ny, nz = res
    arr = flat.reshape(nz, ny, nx, channels).transpose(2, 1, 0, 3)
    return np.ascontiguousarray(arr, dtype=np.float64)


def save_checkpoint(fields: SceneFields, path):
    grids = [
        ("density", fields.density),
        ("normal", fields.normal),
        ("diffuse", fields.diffuse),
        ("tint", fields.tint),
    ]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, grid in grids:
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<3I", *grid.resolution))
            f.write(struct.pack("<6d", *grid.bbox_min, *grid.bbox_max))
            f.write(struct.pack("<I", grid.channels))
            f.write(_grid_to_disk_order(grid.data).tobytes())
        nb = b"env_sh"
        f.write(struct.pack("<I", len(nb)))
        f.write(nb)
        f.write(struct.pack("<I", fields.env.degree))
        f.write(fields.env.coeffs.astype(np.float32).tobytes())


def _read_exact(f, n, path):
    buf = f.read(n)
    if len(buf) != n:
        raise DataError(f"truncated checkpoint: {path}")
    return buf


def load_checkpoint(path):
    grids = {}
    env = None
    try:
        f = open(path, "rb")
    except OSError as e:
        raise DataError(f"cannot open checkpoint: {path} ({e})") from None
    with f:
        if f.read(4) != MAGIC:
            raise DataError(f"not a field checkpoint (bad magic): {path}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, path))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}: {path}")
        while True:
            head = f.read(4)
            if not head:
                break
            (nlen,) = struct.unpack("<I", head)
            name = _read_exact(f, nlen, path).decode("utf-8")
            if name == "env_sh":
                (degree,) = struct.unpack("<I", _read_exact(f, 4, path))
                n = n_sh_coeffs(degree) * 3
                coeffs = np.frombuffer(_read_exact(f, 4 * n, path), dtype="<f4")
                env = EnvMapSH(
                    degree=degree, coeffs=coeffs.astype(np.float64).reshape(-1, 3)
                )
            else:
                res = struct.unpack("<3I", _read_exact(f, 12, path))
                bbox = struct.unpack("<6d", _read_exact(f, 48, path))
                (channels,) = struct.unpack("<I", _read_exact(f, 4, path))
                count = res[0] * res[1] * res[2] * channels
                flat = np.frombuffer(_read_exact(f, 4 * count, path), dtype="<f4")
                mode = "empty" if name == "density" else "clamp"
                grids[name] = VoxelGrid(
                    data=_grid_from_disk_order(flat, res, channels),
                    bbox_min=np.array(bbox[:3]),
                    bbox_max=np.array(bbox[3:]),
                    outside_mode=mode,
                )
    missing = {"density", "normal", "diffuse", "tint"} - set(grids)
    if missing or env is None:
        what = ", ".join(sorted(missing)) + (" env_sh" if env is None else "")
        raise DataError(f"checkpoint missing blocks ({what.strip()}): {path}")
    return SceneFields(env=env, **grids)
