import hashlib
import json
import os
import time
from typing import Any, Dict, Optional

import numpy as np
from tinydb import Query, TinyDB

from config import Config


class CacheManager:
    """Stores capacitance matrices so repeated sweeps skip the Nystrom solve"""

    def __init__(self, cache_path: Optional[str] = None):
        if cache_path is None:
            cache_path = Config.CACHE_PATH
        if cache_path is None:
            # Get the project root directory (parent of the package directory)
            project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
            cache_path = os.path.join(project_root, 'data', 'cache.json')
        os.makedirs(os.path.dirname(os.path.abspath(cache_path)), exist_ok=True)
        self.path = cache_path
        self.db = TinyDB(cache_path)
        self.capacitance_table = self.db.table('capacitance')
        self.expiry_hours = Config.CACHE_EXPIRY_HOURS
        self.hits = 0
        self.misses = 0

    def get_cached_capacitance(self, params: Dict[str, Any]) -> Optional[np.ndarray]:
        """Get a cached 2x2 capacitance matrix for a solver configuration and alpha"""
        cache_key = self._generate_cache_key(params)

        cached = self.capacitance_table.search(Query().cache_key == cache_key)

        if cached:
            cache_entry = cached[0]

            if self._is_cache_valid(cache_entry['timestamp']):
                self.hits += 1
                self.capacitance_table.update({
                    'access_count': cache_entry['access_count'] + 1
                }, Query().cache_key == cache_key)
                return self._decode(cache_entry['C'])
            else:
                # Remove expired cache
                self.capacitance_table.remove(Query().cache_key == cache_key)

        self.misses += 1
        return None

    def cache_capacitance(self, params: Dict[str, Any], C: np.ndarray) -> None:
        cache_key = self._generate_cache_key(params)
        entry = {
            'cache_key': cache_key,
            'params': params,
            'C': self._encode(C),
            'timestamp': time.time(),
        }

        existing = self.capacitance_table.search(Query().cache_key == cache_key)
        if existing:
            self.capacitance_table.update(entry, Query().cache_key == cache_key)
        else:
            entry['access_count'] = 0
            self.capacitance_table.insert(entry)

    def get_cache_stats(self) -> Dict[str, Any]:
        """Get cache statistics"""
        entries = self.capacitance_table.all()
        most_accessed = sorted(entries, key=lambda x: x['access_count'], reverse=True)[:5]

        return {
            'path': self.path,
            'total_cached_matrices': len(entries),
            'session_hits': self.hits,
            'session_misses': self.misses,
            'total_accesses': sum(entry['access_count'] for entry in entries),
            'most_accessed': [
                {
                    'alpha': entry['params'].get('alpha'),
                    'N': entry['params'].get('N'),
                    'access_count': entry['access_count'],
                }
                for entry in most_accessed
            ],
        }

    def clear_expired_cache(self) -> int:
        """Clear expired cache entries and return count of cleared items"""
        expiry_seconds = self.expiry_hours * 3600
        cutoff = time.time() - expiry_seconds

        cleared_count = len(self.capacitance_table.remove(Query().timestamp < cutoff))

        if cleared_count > 0:
            print(f"🧹 Cleared {cleared_count} expired cache entries")

        return cleared_count

    def clear_all_cache(self) -> None:
        """Clear all cached data"""
        self.capacitance_table.truncate()
        print("🗑️ Cleared all cached data")

    def close(self) -> None:
        self.db.close()

    def _generate_cache_key(self, params: Dict[str, Any]) -> str:
        """Hash of the solver configuration; floats are rounded so equal runs share keys"""
        normalized = {
            key: ([round(float(v), 14) for v in value] if isinstance(value, (list, tuple)) else
                  round(float(value), 14) if isinstance(value, float) else value)
            for key, value in params.items()
        }
        hash_object = hashlib.md5(json.dumps(normalized, sort_keys=True).encode())
        return hash_object.hexdigest()

    @staticmethod
    def _encode(C: np.ndarray) -> list:
        return [[float(C[i, j].real), float(C[i, j].imag)] for i in range(2) for j in range(2)]

    @staticmethod
    def _decode(data: list) -> np.ndarray:
        return np.array([complex(re, im) for re, im in data]).reshape(2, 2)

    def _is_cache_valid(self, timestamp: float) -> bool:
        """Check if cache entry is still valid"""
        current_time = time.time()
        expiry_seconds = self.expiry_hours * 3600
        return (current_time - timestamp) < expiry_seconds
