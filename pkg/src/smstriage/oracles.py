"""Brute-force reference implementations used by tests and scenario metrics.

Nothing here imports the production distance, routing, rubric or kernel code.
Distances use the chord formulation (unit vectors) rather than haversine.
"""

from __future__ import annotations

import math

EARTH_RADIUS_KM = 6371.0088


def _unit(lat: float, lon: float) -> tuple[float, float, float]:
    la, lo = math.radians(lat), math.radians(lon)
    return math.cos(la) * math.cos(lo), math.cos(la) * math.sin(lo), math.sin(la)


def chord_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    a, b = _unit(lat1, lon1), _unit(lat2, lon2)
    c = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, c / 2))


def edit_distance(a: str, b: str) -> int:
    """Full Wagner-Fischer matrix, no shortcuts."""
    m = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        m[i][0] = i
    for j in range(len(b) + 1):
        m[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            m[i][j] = min(m[i - 1][j] + 1, m[i][j - 1] + 1,
                          m[i - 1][j - 1] + (0 if a[i - 1] == b[j - 1] else 1))
    return m[len(a)][len(b)]


def oracle_match(token: str, table: dict):
    """Scan every entry; exact wins, else the unique-target minimum within tolerance."""
    if token in table:
        return table[token]
    n = len(token)
    tol = 0 if n <= 3 else (1 if n <= 5 else 2)
    scored = [(edit_distance(token, k), v) for k, v in table.items()]
    within = [(d, v) for d, v in scored if d <= tol]
    if not within:
        return None
    best = min(d for d, _ in within)
    targets = {v for d, v in within if d == best}
    return targets.pop() if len(targets) == 1 else None


def oracle_label(symptoms, epi, prior: bool, w: dict) -> tuple[int, str]:
    """Rubric by enumeration of its terms; ``w`` holds the weight fields by name."""
    common = {"HEADACHE", "MUSCLE_PAIN", "WEAKNESS", "FATIGUE", "VOMITING", "DIARRHEA", "ABDOMINAL_PAIN"}
    terms = []
    for s in sorted(symptoms):
        if s == "FEVER":
            terms.append(w["fever_pts"])
        elif s == "HEMORRHAGE":
            terms.append(w["hemorrhage_pts"])
        elif s in common:
            terms.append(w["common_symptom_pts"])
    if epi:
        terms.append(w["epi_pts"])
    if prior:
        terms.append(w["spatial_prior_pts"])
    pts = sum(terms)
    if "FEVER" in symptoms and pts >= w["likely_threshold"]:
        return pts, "LIKELY"
    if pts >= w["possible_threshold"]:
        return pts, "POSSIBLE"
    return pts, "UNLIKELY"


def oracle_prior(lat, lon, history, now: int, radius_km=20.0, min_cases=3, incubation_days=21) -> bool:
    """``history`` is a list of (label, lat, lon, at)."""
    if lat is None:
        return False
    n = 0
    for label, hlat, hlon, at in history:
        if label != "LIKELY" or hlat is None:
            continue
        if not (0 <= now - at <= incubation_days * 86400):
            continue
        if chord_km(lat, lon, hlat, hlon) <= radius_km:
            n += 1
    return n >= min_cases


def oracle_eligible(facilities, label: str, now: int, ttl_s: int) -> list:
    """``facilities``: iterable of (code, lat, lon, caps, (kind, since, beds))."""
    out = []
    for code, lat, lon, caps, (kind, since, beds) in facilities:
        full = kind == "PRESUMED_FULL" and now < since + ttl_s
        if full:
            continue
        if label in ("LIKELY", "POSSIBLE") and "ISOLATION" not in caps:
            continue
        out.append((code, lat, lon))
    return out


def oracle_nearest(lat: float, lon: float, candidates, tie_km: float = 1e-9) -> "str | None":
    """``candidates``: iterable of (code, lat, lon).

    Every candidate within ``tie_km`` of the minimum is a tie; the smallest code wins.
    """
    dists = [(chord_km(lat, lon, flat, flon), code) for code, flat, flon in candidates]
    if not dists:
        return None
    dmin = min(d for d, _ in dists)
    return min(code for d, code in dists if d <= dmin + tie_km)


def oracle_grid(records, origin_lat: float, origin_lon: float, cell_deg: float, n_rows: int, n_cols: int,
                now: int, sigma_km=10.0, tau_days=7.0, incubation_days=21) -> list[list[float]]:
    """Double loop over cells and records. ``records``: (lat, lon, weight, at)."""
    grid = [[0.0] * n_cols for _ in range(n_rows)]
    for r in range(n_rows):
        clat = origin_lat + (r + 0.5) * cell_deg
        for c in range(n_cols):
            clon = origin_lon + (c + 0.5) * cell_deg
            total = 0.0
            for lat, lon, weight, at in records:
                age = max(0.0, (now - at) / 86400.0)
                if age > 2 * incubation_days:
                    continue
                d = chord_km(clat, clon, lat, lon)
                total += weight * math.exp(-d * d / (2 * sigma_km ** 2)) * math.exp(-age / tau_days)
            grid[r][c] = total
    return grid


def oracle_blur(values, sigma_row: float, sigma_col: float) -> list[list[float]]:
    """Dense 2-D convolution with a truncated (3 sigma), normalized Gaussian; zero outside."""
    rr, rc = math.ceil(3 * sigma_row), math.ceil(3 * sigma_col)
    kern = {}
    for dr in range(-rr, rr + 1):
        for dc in range(-rc, rc + 1):
            kern[dr, dc] = math.exp(-dr * dr / (2 * sigma_row ** 2) - dc * dc / (2 * sigma_col ** 2))
    norm = sum(kern.values())
    n_rows, n_cols = len(values), len(values[0])
    out = [[0.0] * n_cols for _ in range(n_rows)]
    for r in range(n_rows):
        for c in range(n_cols):
            acc = 0.0
            for (dr, dc), k in kern.items():
                sr, sc = r - dr, c - dc
                if 0 <= sr < n_rows and 0 <= sc < n_cols:
                    acc += values[sr][sc] * k
            out[r][c] = acc / norm
    return out
