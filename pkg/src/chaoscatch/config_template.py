"""Default configuration file template for chaoscatch."""

DEFAULT_CONFIG_CONTENT = """# chaoscatch configuration
#
# Every top-level value can be overridden by an environment variable named
# after it (e.g. CHAOS_WINDOW_SECONDS=5), and by the command line flags.

# Where the agent of the target listens. Port 0 picks a free port for each
# window.
agent_endpoint: 127.0.0.1:0

# Mode used by 'chaoscatch run': observation, exploration or falsification.
mode: exploration

# How long each injector stays active, in seconds.
window_seconds: 60
# A target that didn't finish after this long is killed (stalled).
stall_timeout_seconds: 300
# How many injectors may be active at the same time.
max_concurrent_active: 1
# Total activation time allowed per hour, null for no limit.
budget_seconds: null
# Time left to in-flight effects after each window.
cooldown_seconds: 2

# Steady-state preset: 'cli-task' or 'http'. If null, the target's kind.
spec: null
# Behavior comparator: 'verbatim' or 'structured'. If null, the preset's.
comparator: null
# A relative increase of a metric above this is abnormal (0.25 = +25%).
metrics_threshold: 0.25

# Recorded trace to replay against a service. If null, the one recorded by
# 'chaoscatch record-trace' in the experiment directory.
trace: null

# Where baselines, windows, hypotheses and reports are kept.
experiment_dir: .chaoscatch
# Label of the version under test, stored on hypotheses and verdicts.
app_version: ""

# The application under experiment.
target:
  # One of the demo targets: 'download' or 'wiki'. Leave null to run your
  # own command.
  demo: download
  # Variant of the demo target, e.g. 'v2' for the download client without
  # its log call.
  variant: null
  # 'cli-task' for a program that runs to completion, 'http' for a service.
  kind: cli-task
  # Command line. {python} is the current interpreter, {run_dir} the window
  # directory and, for services, {port} the port to listen on.
  command: []
  # File the task produces, compared against the baseline one.
  artifact: null
  cwd: null
  # 'file' if the target logs to $CHAOS_APP_LOG, 'hook' to capture its
  # logging records in-process.
  log_sink: file
  # Path of a service answering 2xx when healthy.
  health_path: /health
"""
