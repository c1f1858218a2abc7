import logging
import shutil
from typing import Dict, Iterable, Optional

from colorama import Fore, init
from rich.console import Console
from rich.table import Table

from ..benchmark import STAT_NAMES, EvalReport

logger = logging.getLogger(__name__)

color_map = {
    "green": Fore.GREEN,
    "yellow": Fore.YELLOW,
    "red": Fore.RED,
    "cyan": Fore.CYAN,
    "blue": Fore.BLUE,
    "magenta": Fore.MAGENTA,
}


class UserInterface:
    """Console output for the command line: coloured messages and rich tables"""

    def __init__(self, color: str = "green", console: Optional[Console] = None):
        init(autoreset=True)
        self.color = color_map.get(color, Fore.GREEN)
        self.console = console or Console()

    def br(self):
        columns = shutil.get_terminal_size((80, 24)).columns
        print(Fore.CYAN + "=" * columns)

    def show_message(self, message: str, color: Optional[str] = None):
        print(color_map.get(color, self.color) + message)
        logger.debug(f"UI Message: {message}")

    def show_warning(self, message: str):
        print(Fore.YELLOW + message)
        logger.warning(f"UI Warning: {message}")

    def show_error(self, message: str):
        print(Fore.RED + message)
        logger.error(f"UI Error: {message}")

    def show_section(self, message: str):
        self.br()
        print(f"{self.color}{message}")
        self.br()

    def show_report(self, report: EvalReport, absolute: bool = True):
        """Per-set statistics table, percent error and optionally absolute error"""
        title = f"{report.method}: percent error"
        self.console.print(self._stats_table(title, ((s.name, s.count, s.failures, s.percent) for s in report.sets)))
        if absolute:
            title = f"{report.method}: absolute error"
            self.console.print(self._stats_table(title, ((s.name, s.count, s.failures, s.absolute)
                                                         for s in report.sets)))
        self.show_message(f"All-Sets mean percent error: {report.all_sets_aggregate:.4f}")

    def show_comparison(self, reports: Iterable[EvalReport]):
        """One row per method with the mean percent error on every set"""
        reports = list(reports)
        if not reports:
            return
        table = Table(title="Mean percent error")
        table.add_column("Method")
        for s in reports[0].sets:
            table.add_column(s.name, justify="right")
        table.add_column("All", justify="right")
        for report in reports:
            table.add_row(report.method, *(f"{s.percent['mean']:.4f}" for s in report.sets),
                          f"{report.all_sets_aggregate:.4f}")
        self.console.print(table)

    @staticmethod
    def _stats_table(title: str, rows: Iterable) -> Table:
        table = Table(title=title)
        table.add_column("Set")
        table.add_column("Count", justify="right")
        table.add_column("Failed", justify="right")
        for name in STAT_NAMES:
            table.add_column(name.capitalize(), justify="right")
        for name, count, failures, stats in rows:
            table.add_row(name, str(count), str(failures), *(f"{stats[k]:.4f}" for k in STAT_NAMES))
        return table

    def show_key_values(self, title: str, values: Dict[str, object]):
        table = Table(title=title, show_header=False)
        table.add_column("Key")
        table.add_column("Value", justify="right")
        for key, value in values.items():
            table.add_row(key, f"{value:.4f}" if isinstance(value, float) else str(value))
        self.console.print(table)
