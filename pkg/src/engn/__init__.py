"""Executable model of the NGN and evolved NGN (Y.2325) control planes.

Modules: ``model`` (types and configuration), ``protocol`` (signaling state
machines and trace checks), ``desim`` (discrete-event simulation),
``markov`` (exact CTMC analysis), ``scaleval`` (population sweeps and the
scalability metric) and ``cli``.
"""

__version__ = "0.1.0"
