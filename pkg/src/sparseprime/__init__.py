"""Neural primality classification over a sparse (m, n, o) integer encoding.

Modules: ``numtheory`` (ground truth), ``encoding``, ``dataset``,
``ndcompute`` (reverse-mode autodiff on numpy), ``model``, ``training``,
``analysis`` and ``cli``.
"""

__version__ = "0.1.0"
