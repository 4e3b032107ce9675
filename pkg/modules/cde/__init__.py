"""Cde subcommand for OccurRank"""
