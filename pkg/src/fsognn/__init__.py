"""Graph-filter policies for FSO fronthaul power and AN selection, trained by primal-dual policy gradient."""

__version__ = "0.1.0"
