import sys

if sys.argv[1:2] == ["subject"]:
    # bypass the full CLI: subject runs are timed, startup counts
    from perfvcs.subjects import main

    sys.exit(main(sys.argv[2:]))

from perfvcs.cli import main  # noqa: E402

sys.exit(main())
