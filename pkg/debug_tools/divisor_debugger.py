"""
Small-divisor ledger.
Appends every flagged divisor report to a JSONL file and summarizes the
stream: counts per kind, the smallest divisors seen, recent entries.
"""

import json
import logging
import os
from collections import Counter
from datetime import datetime
from typing import Any, Dict, Iterable, Optional

from tools.config import get_settings

logger = logging.getLogger("divisor_debugger")


class DivisorDebugger:
    """
    Tracks small-divisor reports raised or re-checked during KAM steps
    """

    def __init__(self, log_file: Optional[str] = None):
        self.log_file = log_file or os.path.join(get_settings().log_dir, "divisor_debug.jsonl")

    def log_reports(self, reports: Iterable[Any], **context) -> int:
        """Append reports (SmallDivisorReport or dicts) with a timestamp and context; returns the count"""
        os.makedirs(os.path.dirname(os.path.abspath(self.log_file)), exist_ok=True)
        stamp = datetime.now().isoformat()
        count = 0
        with open(self.log_file, "a", encoding="utf-8") as f:
            for report in reports:
                entry = report.to_dict() if hasattr(report, "to_dict") else dict(report)
                entry.update({"timestamp": stamp, **context})
                f.write(json.dumps(entry, sort_keys=True) + "\n")
                count += 1
        if count:
            logger.warning(f"{count} small divisors logged ({context})")
        return count

    def _entries(self):
        if not os.path.exists(self.log_file):
            return []
        entries = []
        with open(self.log_file, "r", encoding="utf-8") as f:
            for line in f:
                try:
                    entries.append(json.loads(line.strip()))
                except json.JSONDecodeError:
                    continue
        return entries

    def get_divisor_stats(self) -> Dict[str, Any]:
        """Statistics about the logged divisor reports"""
        entries = self._entries()
        if not entries:
            return {"total_reports": 0, "by_kind": {}, "smallest": None, "recent_reports": []}
        kinds = Counter(e.get("kind", "unknown") for e in entries)
        smallest = min(entries, key=lambda e: abs(e.get("divisor_value", float("inf"))))
        recent = sorted(entries, key=lambda e: e.get("timestamp", ""), reverse=True)[:10]
        return {
            "total_reports": len(entries),
            "by_kind": dict(sorted(kinds.items())),
            "smallest": smallest,
            "recent_reports": recent,
        }

    def clear(self):
        if os.path.exists(self.log_file):
            os.remove(self.log_file)

    def print_debug_info(self):
        """Print ledger summary - ASCII only"""
        print("\n" + "=" * 60)
        print("SMALL DIVISOR DEBUG INFORMATION")
        print("=" * 60)
        print(f"\nLedger: {self.log_file}")

        stats = self.get_divisor_stats()
        print(f"\nDivisor Statistics:")
        print(f"   Total Reports: {stats['total_reports']}")
        for kind, n in stats["by_kind"].items():
            print(f"   {kind}: {n}")
        if stats["smallest"]:
            s = stats["smallest"]
            print(f"   Smallest: {abs(s['divisor_value']):.3e} (threshold {s['threshold']:.3e})")

        if stats["recent_reports"]:
            print(f"\nRecent Reports:")
            for entry in stats["recent_reports"][:5]:
                timestamp = entry.get("timestamp", "")[:19]
                step = f" - step {entry['nu']}" if "nu" in entry else ""
                print(f"   [FLAG] {timestamp}{step} - {entry['kind']} {abs(entry['divisor_value']):.3e} "
                      f"k={entry['indices'].get('k')}")

        print("\n" + "=" * 60)


# Global debugger instance
divisor_debugger = DivisorDebugger()


def debug_divisors(reports: Iterable[Any], **context) -> int:
    """
    Convenience function to log divisor reports
    """
    return divisor_debugger.log_reports(reports, **context)


if __name__ == "__main__":
    import sys

    if len(sys.argv) > 1 and sys.argv[1] == "stats":
        print(json.dumps(divisor_debugger.get_divisor_stats(), indent=2))
    else:
        divisor_debugger.print_debug_info()
