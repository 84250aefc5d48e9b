import datetime
import logging
import os

import regex
from crosshair.main import long_describe_message

from src import LOGS_PATH

ANSI_ESCAPE = regex.compile(r'\x1B(?:[@-Z\\-_]|\[[0-?]*[ -/]*[@-~])')
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _remove_ansi(text):
    return ANSI_ESCAPE.sub('', text)


def log_path_for(name):
    os.makedirs(LOGS_PATH, exist_ok=True)
    timestamp = datetime.datetime.now().strftime("%Y%m%d%H%M%S")
    return os.path.join(LOGS_PATH, f"log_{name}_{timestamp}.txt")


class PlainTextFormatter(logging.Formatter):
    """Log records as plain text: colour codes from terminal-oriented messages are dropped."""

    def format(self, record):
        return _remove_ansi(super().format(record))


class RunLog:
    """
    Timestamped log file of one ``run``/``oracle``/``verify`` invocation.

    Attaches a file handler to the root logger on entry and detaches it on exit; with
    ``console_dump`` the finished log is echoed to stdout.
    """

    def __init__(self, name, console_dump=False, level=logging.INFO):
        self.path = log_path_for(name)
        self.console_dump = console_dump
        self.handler = logging.FileHandler(self.path, mode="w", encoding="utf-8")
        self.handler.setLevel(level)
        self.handler.setFormatter(PlainTextFormatter(LOG_FORMAT))

    def __enter__(self):
        root = logging.getLogger()
        self._root_level = root.level
        # the root level gates records before any handler sees them
        if root.level > self.handler.level:
            root.setLevel(self.handler.level)
        root.addHandler(self.handler)
        return self

    def __exit__(self, exc_type, exc, tb):
        root = logging.getLogger()
        root.removeHandler(self.handler)
        root.setLevel(self._root_level)
        self.handler.close()
        if self.console_dump:
            with open(self.path, "r", encoding="utf-8") as log_file:
                print(log_file.read(), end="")
        print(f"Run log written to: {self.path}")
        return False


def log_analysis_results(target, analysis_results, analysis_options, console_dump):
    log_path = log_path_for(target.__name__)

    with open(log_path, "w", encoding="utf-8") as log_file:
        analysis_header = f"CrossHair Analysis Results for {target.__module__}.{target.__name__}:"
        log_file.write(f"{analysis_header}\n")
        if console_dump:
            print(analysis_header)

        if not analysis_results:
            no_results = "No results."
            log_file.write(f"{no_results}\n")
            if console_dump:
                print(no_results)
        else:
            for result in analysis_results:
                line = long_describe_message(result, analysis_options)
                if line is None:
                    continue
                log_file.write(f"{_remove_ansi(line)}\n")
                if console_dump:
                    print(line)

    print(f"Analysis results logged to: {log_path}")
    return log_path
