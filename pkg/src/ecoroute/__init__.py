"""Agent-based traffic microsimulation with distributed multi-objective eco-routing.

Modules: ``network`` (road graph), ``dynamics`` (car following and intersections),
``emissions`` (operating-mode rate lookup), ``state`` (link reports and dissemination),
``routing`` (link costs and shortest paths), ``engine`` (scenario runner),
``metrics`` (summaries and Welch tests) and ``cli``.
"""

__version__ = "0.1.0"
