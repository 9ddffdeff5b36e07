# This file makes the ncgg directory a Python package
