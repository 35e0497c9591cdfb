"""The single table of canonical default constants.

Every default that other modules or the CLI expose (Huber threshold,
displacement range, pyramid schedule, loss weights, edge sensitivity)
lives here and nowhere else.
"""

DEFAULTS = {
    "delta": 0.1,  # Huber threshold of the regularizers
    "range": 96,  # displacement range of the cost volumes
    "levels": 3,
    "level_iters": (2000, 2000, 4000),  # coarsest level first
    "alpha": 0.1,  # weight of the fitting term in the match loss
    "eps": 0.01,  # Huber threshold of the match loss
    "gamma": 5.0,  # edge sensitivity of the fallback tensor
    "beta": 1.0,  # second-order smoothing weight
}
