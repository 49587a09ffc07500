"""placeholder during build"""
