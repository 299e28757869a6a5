"""Reusable-bank Monte Carlo for tail probabilities of semilinear SDEs
driven by subordinated Brownian noise.

Import submodules directly (levybank.bank, levybank.estimators, ...); this
package root stays free of heavy imports so the CLI can configure threading
before numpy loads.
"""

__version__ = "0.1.0"
