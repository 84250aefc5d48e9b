import datetime
import os
import webbrowser

from coverage import Coverage

from src import COVERAGE_PATH


def report_coverage(cov: Coverage, target, open_coverage: bool):
    timestamp = datetime.datetime.now().strftime("%Y%m%d%H%M%S")
    path = os.path.join(COVERAGE_PATH, f"coverage_{target.__name__}_{timestamp}")
    percent = cov.html_report(directory=path, title=f"Contract coverage: {target.__name__}")
    print(f"Coverage ({percent:.1f}%) written to: {path}. Open index.html in a browser to see the results.")

    if open_coverage:
        webbrowser.open(f"file://{os.path.join(path, 'index.html')}")

    cov.erase()
    return path
