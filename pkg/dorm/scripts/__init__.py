"""
Maintenance scripts for the shipped resources
"""
