"""Numerical laboratory for the quadratic blow-up dynamics of Delta u = chi_{|grad u| > 0}."""
