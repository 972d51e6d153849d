"""
Phonetics-aware Chinese spelling correction.
"""
