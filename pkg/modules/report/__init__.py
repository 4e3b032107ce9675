"""Report subcommand for OccurRank"""
