"""Prepare subcommand for OccurRank"""
