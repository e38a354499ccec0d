"""Recompute p-values from published geometry and from published (BP, AU) pairs.

Two independent routes are shown side by side for each row: p-values from
the reported (beta0, beta1), and SI from the (BP, AU) shortcut. Rows whose
BP or AU rounds to 0 or 1 have no finite shortcut and are marked.

    python scripts/reanalyze_tables.py
"""

from selboot.normal_theory import GeometricQuantities, geometry_from_bp_au, pvalues_from_geometry, si_prime

# label: (BP, AU, SI, beta0, beta1) as published
ROWS = {
    "T1": (0.559, 0.752, 0.372, -0.41, 0.27),
    "T2": (0.304, 0.467, 0.798, 0.30, 0.22),
    "T3": (0.038, 0.126, 0.202, 1.46, 0.32),
    "T4": (0.014, 0.081, 0.124, 1.79, 0.40),
    "T5": (0.032, 0.127, 0.199, 1.50, 0.36),
    "T6": (0.005, 0.032, 0.050, 2.21, 0.35),
    "T7": (0.015, 0.100, 0.150, 1.72, 0.44),
    "T8": (0.001, 0.011, 0.016, 2.74, 0.43),
    "T10": (0.002, 0.022, 0.033, 2.43, 0.42),
    "E1": (1.000, 1.000, 1.000, -3.87, 0.16),
    "E2": (0.930, 0.956, 0.903, -1.59, 0.12),
    "E3": (0.580, 0.719, 0.338, -0.39, 0.19),
    "E4": (0.318, 0.435, 0.775, 0.32, 0.16),
    "E5": (0.037, 0.124, 0.198, 1.47, 0.32),
    "E6": (0.060, 0.074, 0.141, 1.50, 0.05),
    "E7": (0.038, 0.091, 0.154, 1.56, 0.22),
    "E8": (0.018, 0.068, 0.110, 1.80, 0.31),
    "E9": (0.003, 0.014, 0.023, 2.48, 0.27),
}


def main():
    print("item\tbp\tau\tsi\t| bp_geom\tau_geom\tsi_geom\t| b0_short\tb1_short\tsi_short")
    worst_geom = worst_short = 0.0
    for label, (bp, au, si, b0, b1) in ROWS.items():
        p = pvalues_from_geometry(GeometricQuantities(b0, b1))
        worst_geom = max(worst_geom, abs(p.bp - bp), abs(p.au - au), abs(p.si_prime - si))
        line = f"{label}\t{bp:.3f}\t{au:.3f}\t{si:.3f}\t| {p.bp:.3f}\t{p.au:.3f}\t{p.si_prime:.3f}\t| "
        if 0.0 < bp < 1.0 and 0.0 < au < 1.0:
            g = geometry_from_bp_au(bp, au)
            s = si_prime(g)
            worst_short = max(worst_short, abs(s - si))
            line += f"{g.beta0:.2f}\t{g.beta1:.2f}\t{s:.3f}"
        else:
            line += "-\t-\t-"
        print(line)
    print(f"max |diff| from geometry: {worst_geom:.4f}; from shortcut SI: {worst_short:.4f}")


if __name__ == "__main__":
    main()
