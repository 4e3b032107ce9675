"""Sweep subcommand for OccurRank"""
