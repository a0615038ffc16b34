"""Reference values for the Tacoma Narrows configuration.

Used only for comparison columns in the CLI reports and by the
acceptance tests; nothing in the solver depends on them except the
default continuation range.
"""

# period (s) of branch k at vanishing energy
SMALL_ENERGY_PERIODS = {1: 10.95, 2: 7.67, 3: 5.42, 4: 3.75, 5: 2.9, 6: 2.41, 7: 2.02, 8: 1.72, 9: 1.5, 10: 1.32}

# instability threshold per branch: (energy MJ, period s, amplitude m)
THRESHOLDS = {
    1: (38.0, 11.22, 5.8),
    2: (51.8, 8.46, 10.0),
    3: (15.5, 5.48, 6.5),
    4: (53.7, 3.97, 7.8),
    5: (74.1, 3.14, 6.9),
    6: (56.6, 2.53, 4.5),
    7: (91.4, 2.18, 5.2),
    8: (95.8, 1.86, 4.6),
    9: (87.1, 1.59, 3.8),
    10: (82.1, 1.38, 3.3),
}

# expansion rate on an energy grid (MJ); None where no reference value exists
GRID_MJ = (2, 4, 6, 8, 10, 12, 14)
_NA = None
EXPANSION_RATE_GRID = {
    1: (1.0, 1.0, 1.0662, _NA, _NA, _NA, _NA),
    2: (1.0, 1.00365, 1.03904, _NA, _NA, _NA, _NA),
    3: (1.00614, 1.02071, 1.02961, 1.08141, 1.20949, _NA, _NA),
    4: (1.0, 1.0, 1.01287, _NA, _NA, _NA, _NA),
    5: (1.0, 1.0, 1.00001, 1.01521, 1.50051, _NA, _NA),
    6: (1.0, 1.0, 1.0, 1.09919, 1.16332, _NA, _NA),
    7: (1.0, 1.0, 1.0, 1.0, 1.09852, 1.58567, 1.97158),
    8: (1.0, 1.0, 1.0, 1.0, 1.00112, 1.66552, _NA),
    9: (1.0, 1.0, 1.01322, 1.01353, 1.24852, 1.76429, 2.12488),
    10: (1.0, 1.0, 1.0, 1.0, 1.25447, 1.73715, 2.05263),
}

# clearly supercritical grid entries checked quantitatively: (branch, energy MJ, ER)
SPOT_CHECKS = ((5, 10, 1.50051), (7, 14, 1.97158), (9, 12, 1.76429), (10, 14, 2.05263))

PERIOD_TOL = 0.02
THRESHOLD_TOL = {"energy": 0.15, "period": 0.05, "delta": 0.15}
SPOT_CHECK_TOL = 0.10
