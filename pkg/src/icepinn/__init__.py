"""Physics-informed joint prediction of sea-ice drift and concentration.

A dual-branch attention U-net predicts next-day ice velocity and
concentration from a 3-day stack of drift, concentration, air temperature,
and wind. Training combines a data misfit with two physics penalties (no
drift in open water; a bound on the daily thermodynamic concentration
change) and an output-range constraint on the concentration head. The
package ships its own reverse-mode autodiff engine, a synthetic scenario
generator for verification, and a full training / evaluation / sweep
harness behind the ``icepinn`` command-line tool.
"""

__version__ = "0.1.0"
