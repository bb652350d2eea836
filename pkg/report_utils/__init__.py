"""
Report output for the workbench.
This package provides bit-stable JSON and CSV serialization of module reports.
"""
