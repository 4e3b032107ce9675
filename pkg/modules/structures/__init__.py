"""Structures subcommand for OccurRank"""
