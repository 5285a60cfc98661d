"""Plain-text exports: CSV tables and ASCII PLY. Output is byte-stable for identical inputs."""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from . import dsp
from .errors import FormatError
from .machining import Toolpath
from .perception import PointCloud, ScanGrid
from .sensors import ProfileScan


def _num(v) -> str:
    v = float(v)
    return "nan" if np.isnan(v) else repr(v)


def _rows(header: str, columns) -> str:
    buf = io.StringIO()
    buf.write(header + "\n")
    for row in zip(*columns):
        buf.write(",".join(_num(v) if not isinstance(v, (str, np.str_)) else str(v) for v in row) + "\n")
    return buf.getvalue()


def ec_trace_csv(trace: dict, window: int = 15) -> str:
    """One row per demodulated block; ``filtered`` is the moving average of the modulus."""
    t = np.asarray(trace["t_us"], dtype=np.int64)
    i, q = np.asarray(trace["i"]), np.asarray(trace["q"])
    mod = np.hypot(i, q)
    filt = dsp.moving_average(mod, window)
    buf = io.StringIO()
    buf.write("t_us,raw,i,q,modulus,filtered,z_m,roll_deg\n")
    for k in range(t.size):
        buf.write(
            f"{int(t[k])},{_num(trace['raw'][k])},{_num(i[k])},{_num(q[k])},{_num(mod[k])},"
            f"{_num(filt[k])},{_num(trace['z_m'][k])},{_num(trace['roll_deg'][k])}\n"
        )
    return buf.getvalue()


def read_csv(path_or_text) -> tuple[list[str], np.ndarray]:
    text = Path(path_or_text).read_text() if isinstance(path_or_text, Path) else str(path_or_text)
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty CSV")
    header = lines[0].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:] if ln], dtype=float)
    return header, data.reshape(-1, len(header))


def iq_csv(stream: dsp.IQStream) -> str:
    buf = io.StringIO()
    buf.write("t_us,i,q\n")
    for t, i, q in zip(stream.t_us, stream.i, stream.q):
        buf.write(f"{int(t)},{_num(i)},{_num(q)}\n")
    return buf.getvalue()


def events_csv(events) -> str:
    return "t_us,kind,value\n" + "".join(f"{e.t_us},{e.kind},{_num(e.value)}\n" for e in events)


def profile_scan_csv(scan: ProfileScan) -> str:
    buf = io.StringIO()
    buf.write("theta_deg,z_mm,range_mm\n")
    for line in scan.lines:
        th = _num(line.theta)
        for z, r in zip(line.z_local, line.ranges):
            buf.write(f"{th},{_num(z)},{_num(r)}\n")
    return buf.getvalue()


def ply_text(cloud: PointCloud | np.ndarray) -> str:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    pts = pts[np.isfinite(pts).all(axis=1)]
    buf = io.StringIO()
    buf.write("ply\nformat ascii 1.0\n")
    buf.write(f"element vertex {len(pts)}\nproperty float x\nproperty float y\nproperty float z\nend_header\n")
    for x, y, z in pts:
        buf.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
    return buf.getvalue()


def read_ply(text: str) -> np.ndarray:
    lines = text.splitlines()
    if not lines or lines[0] != "ply":
        raise FormatError("not a PLY file")
    end = lines.index("end_header")
    n = next(int(ln.split()[-1]) for ln in lines[:end] if ln.startswith("element vertex"))
    return np.array([[float(v) for v in ln.split()] for ln in lines[end + 1 : end + 1 + n]]).reshape(n, 3)


def grid_csv(grid: ScanGrid) -> str:
    """Matrix CSV: first row is theta (deg), first column z (m), body the filtered modulus."""
    buf = io.StringIO()
    buf.write("z_m\\theta_deg," + ",".join(_num(t) for t in grid.theta) + "\n")
    for z, row in zip(grid.z, grid.values):
        buf.write(_num(z) + "," + ",".join(_num(v) for v in row) + "\n")
    return buf.getvalue()


def read_grid_csv(text: str) -> ScanGrid:
    lines = [ln for ln in text.splitlines() if ln]
    theta = np.array([float(v) for v in lines[0].split(",")[1:]])
    body = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return ScanGrid(body[:, 0], theta, body[:, 1:])


def toolpath_csv(tp: Toolpath) -> str:
    buf = io.StringIO()
    buf.write("kind,x0,y0,z0,x1,y1,z1,feed,rpm,doc\n")
    for s in tp.segments:
        vals = [*s.start, *s.end, s.feed, s.spindle_rpm, s.radial_doc]
        buf.write(s.kind + "," + ",".join(_num(v) for v in vals) + "\n")
    return buf.getvalue()
