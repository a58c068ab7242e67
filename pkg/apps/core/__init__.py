"""
Core app - errors, shared utilities, artifact containers and the service base
"""
