"""rmtscope: random-matrix diagnostics and spectral surgery for weight matrices.

The package reads checkpoint containers, compares weight-matrix singular
value spectra against the Marchenko-Pastur law, correlates spectral outliers
with activation-covariance eigenvectors, performs singular-value removal,
and measures the downstream effect on desk-scale models.  See the `cli`
module for the command-line entry points.
"""

__version__ = "0.1.0"
