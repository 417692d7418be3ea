"""Version-control-aware performance profiling toolkit.

The package is split into small modules:

* :mod:`perfvcs.profile`  profile data model and canonical ``.perf.json`` form
* :mod:`perfvcs.collect`  trace import, time wrapper, scaled workload generation
* :mod:`perfvcs.store`    content-addressed profile store linked to git commits
* :mod:`perfvcs.models`   complexity-class regression and nonparametric smoothers
* :mod:`perfvcs.detect`   degradation detection between baseline and target
* :mod:`perfvcs.fuzz`     performance-oriented mutation fuzzer
* :mod:`perfvcs.report`   scatter / folded-stack / bar outputs
* :mod:`perfvcs.cli`      command line front-end

Keep this module free of heavy imports: bundled subjects are started through
``python -m perfvcs subject ...`` and their startup time is part of every
measured run.
"""

__version__ = "0.1.0"
