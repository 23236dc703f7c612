#!/usr/bin/env python
"""Verify that the environment can run the ICRL lab."""
import sys
import importlib.util

REQUIRED_PACKAGES = {
    "numpy": "numpy",
    "scipy": "scipy",
    "yaml": "PyYAML",
    "dotenv": "python-dotenv",
}

DEV_PACKAGES = {
    "pytest": "pytest",
}


def check_package(module_name: str, package_display: str) -> bool:
    """Check if a package is installed."""
    spec = importlib.util.find_spec(module_name)
    if spec is not None:
        print(f"✅ {package_display}")
        return True
    else:
        print(f"❌ {package_display} (missing)")
        return False


def main():
    print("\n🔍 Verifying icrl-lab environment...\n")

    all_ok = True

    print("Required packages:")
    for module, display in REQUIRED_PACKAGES.items():
        if not check_package(module, display):
            all_ok = False

    print("\nDev packages:")
    dev_ok = True
    for module, display in DEV_PACKAGES.items():
        if not check_package(module, display):
            dev_ok = False

    print("\nPackage import:")
    package_ok = check_package("icrl_lab", "icrl_lab (pip install -e .)")

    print("\n" + "=" * 60)
    if all_ok and dev_ok and package_ok:
        print("✅ Environment is set up correctly!")
    else:
        print("❌ Some packages are missing.")
        print("\nRun this to fix:")
        print("  pip install -e '.[dev]'")
    print("=" * 60 + "\n")

    return 0 if all_ok and package_ok else 1


if __name__ == "__main__":
    sys.exit(main())
