"""
Spelling correction package: the app modules, build scripts and tests.
"""
