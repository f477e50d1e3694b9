"""Numerical toolkit for the Dirac system ``B y' + V y = lambda y`` on (0, pi).

Modules
-------
function_space  quadrature grid, two-component functions, log-domain magnitudes
dirac_solver    factored fundamental matrices via Volterra/Picard iteration
asymptotics     norm envelopes, cross inner products and the decay-ratio sweep
bvp             characteristic determinant, eigenvalue search, biorthogonal pairs
expansion       rank-one projectors, partial sums and the divergence witness
cli             TOML-configured command-line front end
"""

__version__ = "0.1.0"
