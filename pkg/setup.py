# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Federated training with Count-Sketch compressed weights"""

# Setuptools setup for comfetch.

import os

from setuptools import setup

# Get or massage our metadata.  We exec comfetch/version.py so we can avoid
# importing the product code into setup.py.

classifiers = """\
Environment :: Console
Intended Audience :: Science/Research
License :: OSI Approved :: Apache Software License
Operating System :: OS Independent
Programming Language :: Python
Programming Language :: Python :: 3
Programming Language :: Python :: 3.8
Programming Language :: Python :: 3.9
Programming Language :: Python :: 3.10
Programming Language :: Python :: Implementation :: CPython
Topic :: Scientific/Engineering :: Artificial Intelligence
"""

cf_ver_py = os.path.join(os.path.split(__file__)[0], "comfetch/version.py")
with open(cf_ver_py) as version_file:
    # __doc__ will be overwritten by version.py.
    doc = __doc__
    # Keep pylint happy.
    __version__ = __url__ = version_info = ""
    # Execute the code in version.py.
    exec(compile(version_file.read(), cf_ver_py, 'exec'))

with open("README.rst") as readme:
    long_description = readme.read().replace("https://comfetch.readthedocs.io", __url__)

classifier_list = classifiers.splitlines()

if version_info[3] == 'alpha':
    devstat = "3 - Alpha"
elif version_info[3] in ['beta', 'candidate']:
    devstat = "4 - Beta"
else:
    assert version_info[3] == 'final'
    devstat = "5 - Production/Stable"
classifier_list.append("Development Status :: " + devstat)

# Create the keyword arguments for setup()

setup_args = dict(
    name='comfetch',
    version=__version__,

    packages=[
        'comfetch',
    ],

    entry_points={
        'console_scripts': [
            'comfetch = comfetch.cmdline:main',
        ],
    },

    install_requires=[
        'numpy>=1.20',
        'matplotlib>=3.3',
    ],

    extras_require={
        # Enable pyproject.toml support.
        'toml': ['tomli'],
        'test': [
            'pytest',
            'pytest-xdist',
            'flaky',
            'hypothesis',
        ],
    },

    description=doc,
    long_description=long_description,
    long_description_content_type='text/x-rst',
    keywords='federated learning count sketch gradient compression',
    license='Apache 2.0',
    classifiers=classifier_list,
    project_urls={
        'Documentation': __url__,
    },
    python_requires=">=3.8",
)


if __name__ == '__main__':
    setup(**setup_args)
