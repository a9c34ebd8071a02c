"""Generative volume forecasting with conditional variational auto-encoders.

The package trains CVAEs on panel data whose conditioning input mixes
"advanced" features (known ahead of the forecast horizon, such as index
rebalancing dates or day-of-week) with ordinary lagged observations, and
produces sampled forecast ensembles, counterfactual scenarios and linear
baseline comparisons.
"""

__version__ = "0.1.0"
