"""
OccurRank library: ingest, candidates, flow, model, losses, protocols, metrics
"""

from shared.utils import (
    is_frame_file, list_frame_files, parse_value_list,
    sanitize_filename, read_id_list
)

__all__ = [
    'is_frame_file',
    'list_frame_files',
    'parse_value_list',
    'sanitize_filename',
    'read_id_list',
]
