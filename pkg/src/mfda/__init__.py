"""Multi-fidelity delayed acceptance MCMC with neural-network surrogates.

Modules: :mod:`prob` (priors, likelihoods, proposals), :mod:`samplers`
(MH, MLDA, MFDA), :mod:`nn` (branch-fusion networks), :mod:`darcy` and
:mod:`rd` (forward problems), :mod:`pod`, :mod:`surrogate`,
:mod:`diagnostics` and :mod:`harness`.
"""

__version__ = "0.1.0"
