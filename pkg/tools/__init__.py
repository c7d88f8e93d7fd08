"""
augbank tools

Command line entry points for building banks, training models and running
the experiment protocols.
"""
