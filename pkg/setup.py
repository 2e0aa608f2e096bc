from setuptools import setup


with open("VERSION") as f:
    version = f.read().strip()


# Try not to add new dependencies unless they are really essential.
# If you add a new dependency, make sure to make the version range as wide as possible.
INSTALL_REQUIRES = [
    "arrow>=1.1.1",
    "numpy>=1.22",
    "pandas>=1.5",
    "scipy>=1.8",
    "tqdm>=4.62.3",
]

setup(
    name="jadce",
    version=version,
    description="Group-sparse activity detection and channel estimation for grant-free access.",
    install_requires=INSTALL_REQUIRES,
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    readme="README.md",
    packages=["jadce"],
    data_files=["VERSION", "README.md"],
    entry_points={"console_scripts": ["jadce=jadce.cli:main"]},
    include_package_data=True
)
